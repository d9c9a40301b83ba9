"""Detection metrics, scale-map correlation and operator timing.

Matching follows the usual ICDAR-style greedy rule: detections are visited
in descending score order and each takes the still-unmatched ground truth
with the highest IoU, provided it reaches the threshold.

When a scene set has no detections at all, precision is reported as 1 (there
are no false positives) and recall as 0, giving F = 0.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import anchor_budget, iou_matrix
from .ppm import write_ppm


@dataclass
class EvalReport:
    precision: float
    recall: float
    f_measure: float
    iou_threshold: float
    tp: int
    fp: int
    fn: int
    per_scene: list = field(default_factory=list)  # (tp, fp, fn) per scene

    def summary(self):
        return (f"IoU>={self.iou_threshold:g}  P={self.precision:.4f}  R={self.recall:.4f}  "
                f"F={self.f_measure:.4f}  (tp={self.tp} fp={self.fp} fn={self.fn}; "
                f"P=1 by convention when there are no detections)")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scene", "tp", "fp", "fn"])
        for k, row in enumerate(self.per_scene):
            w.writerow([k, *row])
        w.writerow(["total", self.tp, self.fp, self.fn])
        w.writerow(["precision", self.precision])
        w.writerow(["recall", self.recall])
        w.writerow(["f_measure", self.f_measure])
        return buf.getvalue()


def f_measure(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def match_scene(boxes, scores, gts, iou_threshold):
    """Greedy score-descending matching for one scene; returns ``(tp, fp, fn)``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return 0, 0, len(gts)
    if len(gts) == 0:
        return 0, len(boxes), 0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ov = iou_matrix(boxes, gts)
    taken = np.zeros(len(gts), bool)
    tp = 0
    for d in order:
        cand = np.where(taken, -1.0, ov[d])
        g = int(np.argmax(cand))
        if cand[g] >= iou_threshold:
            taken[g] = True
            tp += 1
    return tp, len(boxes) - tp, len(gts) - tp


def evaluate(dets, gts, iou_threshold=0.5):
    """``dets`` is a list of ``(boxes, scores)`` per scene, ``gts`` a list of box arrays."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection sets for {len(gts)} scenes")
    per_scene = [match_scene(b, s, g, iou_threshold) for (b, s), g in zip(dets, gts)]
    tp = sum(r[0] for r in per_scene)
    fp = sum(r[1] for r in per_scene)
    fn = sum(r[2] for r in per_scene)
    p = tp / (tp + fp) if tp + fp > 0 else 1.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalReport(p, r, f_measure(p, r), iou_threshold, tp, fp, fn, per_scene)


def evaluate_size_band(dets, gts, lo, hi, iou_threshold=0.5):
    """P/R/F restricted to ground truths whose diagonal lies in ``[lo, hi]``.

    Matching runs against all ground truths.  Detections matched to an
    out-of-band box are ignored, and unmatched detections count as false
    positives only when their own diagonal is in the band.
    """
    tp = fp = fn = 0
    per_scene = []
    for (boxes, scores), g in zip(dets, gts):
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        g = np.asarray(g, dtype=np.float64).reshape(-1, 4)
        in_band = (np.hypot(g[:, 2], g[:, 3]) >= lo) & (np.hypot(g[:, 2], g[:, 3]) <= hi)
        taken = np.zeros(len(g), bool)
        s_tp = s_fp = 0
        if len(boxes) and len(g):
            ov = iou_matrix(boxes, g)
        for d in np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable"):
            if len(g):
                cand = np.where(taken, -1.0, ov[d])
                k = int(np.argmax(cand))
                if cand[k] >= iou_threshold:
                    taken[k] = True
                    s_tp += bool(in_band[k])
                    continue
            diag = math.hypot(boxes[d, 2], boxes[d, 3])
            s_fp += lo <= diag <= hi
        s_fn = int((in_band & ~taken).sum())
        per_scene.append((s_tp, s_fp, s_fn))
        tp, fp, fn = tp + s_tp, fp + s_fp, fn + s_fn
    p = tp / (tp + fp) if tp + fp > 0 else 1.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalReport(p, r, f_measure(p, r), iou_threshold, tp, fp, fn, per_scene)


def smallest_quartile_band(gts):
    """Diagonal band ``(0, q25]`` over all ground truths."""
    diag = np.concatenate([np.hypot(g[:, 2], g[:, 3]) for g in gts if len(g)])
    return 0.0, float(np.quantile(diag, 0.25))


# -- scale map vs object size -------------------------------------------------

@dataclass
class ScaleCorrelationReport:
    sizes: np.ndarray  # gt diagonals
    scales: np.ndarray  # scale at each gt's center cell
    pearson_r: float | None  # None when degenerate (zero variance)
    bins: list  # (size_lo, size_hi, mean_scale, count)
    skipped: int = 0

    @property
    def degenerate(self):
        return self.pearson_r is None

    def summary(self):
        r = "degenerate" if self.degenerate else f"{self.pearson_r:.4f}"
        lines = [f"pairs={len(self.sizes)} skipped={self.skipped} pearson_r={r}"]
        for lo, hi, mean, n in self.bins:
            lines.append(f"  diag [{lo:6.1f}, {hi:6.1f}): mean scale {mean:.3f} (n={n})")
        return "\n".join(lines)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        return None
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def scale_correlation_from_maps(scale_maps, gts_list, stride, n_bins=4):
    """Correlate gt diagonal with the scale read at the cell holding its center."""
    sizes, scales = [], []
    skipped = 0
    for smap, gts in zip(scale_maps, gts_list):
        H, W = smap.shape
        for x, y, w, h in np.asarray(gts, dtype=np.float64).reshape(-1, 4):
            row, col = int(math.floor(y / stride)), int(math.floor(x / stride))
            if not (0 <= row < H and 0 <= col < W):
                skipped += 1
                continue
            sizes.append(math.hypot(w, h))
            scales.append(float(smap[row, col]))
    sizes = np.asarray(sizes)
    scales = np.asarray(scales)
    bins = []
    if len(sizes):
        edges = np.quantile(sizes, np.linspace(0, 1, n_bins + 1))
        for k in range(n_bins):
            lo, hi = edges[k], edges[k + 1]
            sel = (sizes >= lo) & ((sizes < hi) if k < n_bins - 1 else (sizes <= hi))
            if sel.any():
                bins.append((float(lo), float(hi), float(scales[sel].mean()), int(sel.sum())))
    return ScaleCorrelationReport(sizes, scales, pearson(sizes, scales), bins, skipped)


def scale_correlation(model, scenes):
    from .network.model import STRIDE

    maps = [model.forward(sc.image[None]).scale.value[0] for sc in scenes]
    return scale_correlation_from_maps(maps, [sc.gts for sc in scenes], STRIDE)


def write_heatmap(path, smap, upsample=4):
    """Grayscale PPM of a scale map, min -> black, max -> white.

    Returns the ``(min, max)`` range used.
    """
    smap = np.asarray(smap, dtype=np.float64)
    lo, hi = float(smap.min()), float(smap.max())
    norm = (smap - lo) / (hi - lo) if hi > lo else np.zeros_like(smap)
    gray = np.round(norm * 255).astype(np.uint8)
    gray = np.repeat(np.repeat(gray, upsample, axis=0), upsample, axis=1)
    write_ppm(path, np.stack([gray] * 3, axis=-1))
    return lo, hi


# -- timing -------------------------------------------------------------------

@dataclass
class BenchRow:
    op: str
    size: str
    repetitions: int
    median_s: float
    p10_s: float
    p90_s: float


def time_call(fn, repetitions, warmup=1):
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    samples = np.asarray(samples)
    return float(np.median(samples)), float(np.percentile(samples, 10)), float(np.percentile(samples, 90))


def bench(ops=("anchorconv-forward", "anchorconv-backward", "standard-conv"),
          sizes=((32, 16, 16),), repetitions=20, warmup=1, n_c=3, seed=0, scale=1.0):
    """Time the head operator; ``sizes`` are ``(channels, H, W)`` triples.

    Returns ``(rows, budget)`` where ``budget`` compares a single map against
    a halving pyramid over the largest benchmarked map.
    """
    from . import anchorconv

    rng = np.random.default_rng(seed)
    rows = []
    for C, H, W in sizes:
        spec = anchorconv.ConvSpec(C, 6 * n_c, 1, 5)
        x = rng.standard_normal((1, C, H, W))
        params = anchorconv.ConvParams(rng.standard_normal((spec.c_out, C, 1, 5)),
                                       rng.standard_normal(spec.c_out))
        smap = np.full((H, W), float(scale))
        out, ctx = anchorconv.forward(x, params, smap, spec)
        g = rng.standard_normal(out.shape)
        fns = {
            "anchorconv-forward": lambda: anchorconv.forward(x, params, smap, spec),
            "anchorconv-backward": lambda: anchorconv.backward(g, ctx),
            "standard-conv": lambda: anchorconv.dilated_conv(x, params.kernel, params.bias),
        }
        for op in ops:
            med, p10, p90 = time_call(fns[op], repetitions, warmup)
            rows.append(BenchRow(op, f"{C}x{H}x{W}", repetitions, med, p10, p90))
    _, H, W = max(sizes, key=lambda s: s[1] * s[2])
    pyramid = pyramid_sizes(H, W)
    budget = (anchor_budget(True, pyramid, n_c), anchor_budget(False, pyramid, n_c))
    return rows, budget


def pyramid_sizes(H, W, levels=6):
    """Cell counts of a halving feature pyramid starting at ``H x W``."""
    sizes = []
    for _ in range(levels):
        sizes.append(H * W)
        if H == 1 and W == 1:
            break
        H, W = max(1, (H + 1) // 2), max(1, (W + 1) // 2)
    return sizes


def bench_csv(rows, budget):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["op", "size", "repetitions", "median_s", "p10_s", "p90_s"])
    for r in rows:
        w.writerow([r.op, r.size, r.repetitions, f"{r.median_s:.6e}", f"{r.p10_s:.6e}", f"{r.p90_s:.6e}"])
    single, multi = budget
    w.writerow([])
    w.writerow(["anchor_budget", "single_layer", single.total, "pyramid", multi.total,
                "ratio", f"{multi.total / single.total:.4f}"])
    return buf.getvalue()
