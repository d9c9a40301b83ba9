"""Synthetic text-like scenes with exact box labels, and their on-disk form.

A scene is a background (flat colour, linear gradient or smooth noise) with a
few elongated bars drawn on it.  Striped bars alternate two shades in vertical
strips, which gives a rough word texture.  Every bar is axis-aligned on the
pixel grid, so its label is exact.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import iou_matrix
from .ppm import PPMError, from_pixels, read_ppm, to_pixels, write_ppm

MAX_TRIES = 100


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 4
    min_width: float = 8.0
    max_width: float = 48.0
    min_aspect: float = 2.0
    max_aspect: float = 5.0
    min_height: int = 4
    background: str = "mixed"
    glyph: str = "striped"
    noise: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ValueError("bad object count range")
        if not 0 < self.min_width <= self.max_width <= self.image_size:
            raise ValueError("object widths must lie within the image")
        if not 0 < self.min_aspect <= self.max_aspect:
            raise ValueError("bad aspect ratio range")

    @classmethod
    def from_config(cls, cfg, seed=None):
        return cls(
            image_size=cfg.image_size, min_objects=cfg.min_objects, max_objects=cfg.max_objects,
            min_width=cfg.min_width, max_width=cfg.max_width, min_aspect=cfg.min_aspect,
            max_aspect=cfg.max_aspect, min_height=cfg.min_height, background=cfg.background,
            glyph=cfg.glyph, noise=cfg.noise,
            seed=cfg.data_seed if seed is None else seed)

    def digest(self):
        return hashlib.sha1(repr(sorted(asdict(self).items())).encode()).hexdigest()[:12]


@dataclass
class Scene:
    image: np.ndarray  # (3, H, W) in [0, 1], multiples of 1/255
    gts: np.ndarray  # (G, 4) center-size boxes
    meta: dict = field(default_factory=dict)


def _luma(rgb):
    return float(np.dot(rgb, [0.299, 0.587, 0.114]))


def _background(rng, style, size):
    if style == "mixed":
        style = ("flat", "gradient", "noise")[rng.integers(3)]
    if style == "flat":
        return np.broadcast_to(rng.uniform(0, 1, (3, 1, 1)), (3, size, size)).copy()
    if style == "gradient":
        c0 = rng.uniform(0, 1, (3, 1, 1))
        c1 = rng.uniform(0, 1, (3, 1, 1))
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        return c0 + (c1 - c0) * t
    # smooth noise: a coarse random grid upsampled bilinearly
    coarse = rng.uniform(0, 1, (3, 5, 5))
    pos = np.linspace(0, 4, size)
    i0 = np.minimum(np.floor(pos).astype(int), 3)
    f = pos - i0
    rows = coarse[:, i0] * (1 - f)[None, :, None] + coarse[:, i0 + 1] * f[None, :, None]
    return rows[:, :, i0] * (1 - f) + rows[:, :, i0 + 1] * f


def _draw_bar(rng, img, x0, y0, w, h, glyph):
    patch = img[:, y0:y0 + h, x0:x0 + w]
    bg = patch.reshape(3, -1).mean(axis=1)
    dark = _luma(bg) > 0.5
    lo, hi = (0.0, 0.3) if dark else (0.7, 1.0)
    tint = rng.uniform(-0.1, 0.1, 3)
    ink = np.clip(rng.uniform(lo, hi) + tint, 0, 1)
    img[:, y0:y0 + h, x0:x0 + w] = ink[:, None, None]
    if glyph == "striped" and w >= 3:
        # vertical strips a little lighter/darker than the ink, never at the bar ends
        shade = np.clip(ink + (0.25 if dark else -0.25), 0, 1)
        period = int(rng.integers(2, 5))
        cols = np.arange(1, w - 1)
        on = (cols // max(period // 2, 1)) % 2 == 1
        img[:, y0:y0 + h, x0 + cols[on]] = shade[:, None, None]


def generate_scene(spec: SceneSpec, index: int) -> Scene:
    """Scene number ``index`` of the stream defined by ``spec``; pure in (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    img = _background(rng, spec.background, size)
    requested = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    rects = []
    for _ in range(requested):
        for _ in range(MAX_TRIES):
            w = int(round(np.exp(rng.uniform(np.log(spec.min_width), np.log(spec.max_width)))))
            aspect = rng.uniform(spec.min_aspect, spec.max_aspect)
            h = min(max(spec.min_height, int(round(w / aspect))), size)
            w = min(max(w, 1), size)
            x0 = int(rng.integers(0, size - w + 1))
            y0 = int(rng.integers(0, size - h + 1))
            # keep a 2-pixel gap between bars
            if all(x0 >= bx + bw + 2 or bx >= x0 + w + 2 or y0 >= by + bh + 2 or by >= y0 + h + 2
                   for bx, by, bw, bh in rects):
                rects.append((x0, y0, w, h))
                break
    for x0, y0, w, h in rects:
        _draw_bar(rng, img, x0, y0, w, h, spec.glyph)
    if spec.noise > 0:
        img = img + rng.normal(0, spec.noise, img.shape)
    image = np.round(np.clip(img, 0, 1) * 255) / 255
    gts = np.array([(x0 + w / 2, y0 + h / 2, w, h) for x0, y0, w, h in rects],
                   dtype=np.float64).reshape(-1, 4)
    meta = {"seed": spec.seed, "index": index, "spec": spec.digest(),
            "requested": requested, "placed": len(rects)}
    return Scene(image, gts, meta)


def generate_scenes(spec, start, count):
    return [generate_scene(spec, i) for i in range(start, start + count)]


def max_pairwise_iou(gts):
    if len(gts) < 2:
        return 0.0
    ov = iou_matrix(gts, gts)
    np.fill_diagonal(ov, 0.0)
    return float(ov.max())


# -- box text files ----------------------------------------------------------

def format_boxes(boxes, scores=None):
    lines = []
    for k, b in enumerate(np.asarray(boxes, dtype=np.float64).reshape(-1, 4)):
        fields_ = [repr(float(v)) for v in b]
        if scores is not None:
            fields_.append(repr(float(scores[k])))
        lines.append(" ".join(fields_))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_boxes(text, path="<boxes>"):
    """Parse ``x y w h [score]`` lines; returns ``(boxes, scores or None)``."""
    boxes, scores = [], []
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), 1):
        parts = line.split()
        if parts:
            if len(parts) not in (4, 5):
                raise ValueError(f"{path}:{lineno} (byte {offset}): expected 4 or 5 fields")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno} (byte {offset}): non-numeric field") from None
            boxes.append(vals[:4])
            scores.append(vals[4] if len(vals) == 5 else None)
        offset += len(line.encode())
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if scores and all(s is not None for s in scores):
        return arr, np.asarray(scores)
    return arr, None


# -- dataset directories -----------------------------------------------------

MANIFEST = "manifest.txt"


def write_dataset(scenes, directory):
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gts").mkdir(exist_ok=True)
    lines = []
    for k, scene in enumerate(scenes):
        img_rel = f"images/{k:05d}.ppm"
        gt_rel = f"gts/{k:05d}.txt"
        write_ppm(root / img_rel, to_pixels(scene.image))
        (root / gt_rel).write_text(format_boxes(scene.gts))
        lines.append(f"{img_rel} {gt_rel}")
    (root / MANIFEST).write_text("\n".join(lines) + ("\n" if lines else ""))
    return root / MANIFEST


def read_dataset(directory, dtype=np.float64):
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.exists():
        return []
    scenes = []
    offset = 0
    raw = manifest.read_bytes()
    for line in raw.splitlines(keepends=True):
        parts = line.decode("utf-8").split()
        if parts:
            if len(parts) != 2:
                raise PPMError(str(manifest), offset, "manifest lines must be 'image_path gt_path'")
            img_path, gt_path = (root / p for p in parts)
            image = from_pixels(read_ppm(img_path), dtype)
            gts, _ = parse_boxes(gt_path.read_text(), path=str(gt_path))
            scenes.append(Scene(image, gts, {"image": os.fspath(img_path)}))
        offset += len(line)
    return scenes
