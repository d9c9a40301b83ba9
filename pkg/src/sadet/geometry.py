"""Anchors, box coding, overlap, matching and suppression.

Boxes are center-size rectangles ``(x, y, w, h)`` in pixels.  Every function
accepts a single :class:`Box` or an ``(..., 4)`` array; the array forms are
what the training loop uses.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np


class Box(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class AnchorBox(NamedTuple):
    base: Box
    grid_row: int
    grid_col: int
    ratio_index: int


class Offsets(NamedTuple):
    dx: float
    dy: float
    dw: float
    dh: float


class MatchAssignment(NamedTuple):
    anchor_index: int
    positive: bool
    matched_gt_index: int | None
    iou: float


class AnchorBudget(NamedTuple):
    n_layers: int
    layer_sizes: tuple
    anchors_per_cell: int
    total: int


class GeometryError(ValueError):
    pass


def as_boxes(boxes):
    """Stack boxes into a float64 ``(N, 4)`` array (``(4,)`` stays ``(4,)``)."""
    if isinstance(boxes, np.ndarray):
        return boxes
    if isinstance(boxes, tuple) and len(boxes) == 4 and np.isscalar(boxes[0]):
        return np.asarray(boxes, dtype=np.float64)
    arr = np.asarray([tuple(b) for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


# -- anchors ----------------------------------------------------------------

def anchor_shapes(base_size, aspect_ratios):
    """Per-ratio ``(w0, h0)`` for area-preserving anchors of side ``base_size``."""
    if len(aspect_ratios) == 0:
        raise GeometryError("aspect ratio list is empty")
    if base_size <= 0 or any(r <= 0 for r in aspect_ratios):
        raise GeometryError("base size and aspect ratios must be positive")
    r = np.asarray(aspect_ratios, dtype=np.float64)
    return np.stack([base_size * np.sqrt(r), base_size / np.sqrt(r)], axis=1)


def anchor_grid(map_h, map_w, stride, base_size, aspect_ratios):
    """Initial anchors as an ``(map_h * map_w * n_ratios, 4)`` array.

    Ordering is row-major over cells, ratio fastest, matching the head's
    channel layout.
    """
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    shapes = anchor_shapes(base_size, aspect_ratios)
    n_c = len(shapes)
    rows, cols = np.meshgrid(np.arange(map_h), np.arange(map_w), indexing="ij")
    cx = ((cols + 0.5) * stride).reshape(-1, 1)
    cy = ((rows + 0.5) * stride).reshape(-1, 1)
    out = np.empty((map_h * map_w, n_c, 4))
    out[..., 0] = cx
    out[..., 1] = cy
    out[..., 2] = shapes[:, 0]
    out[..., 3] = shapes[:, 1]
    return out.reshape(-1, 4)


def generate_initial_anchors(map_h, map_w, stride, base_size, aspect_ratios):
    arr = anchor_grid(map_h, map_w, stride, base_size, aspect_ratios)
    n_c = len(aspect_ratios)
    out = []
    for idx, (x, y, w, h) in enumerate(arr):
        cell, k = divmod(idx, n_c)
        row, col = divmod(cell, map_w)
        out.append(AnchorBox(Box(x, y, w, h), row, col, k))
    return out


def apply_scale(anchor, s):
    """Scale an anchor's width and height by ``s`` about its fixed center.

    ``anchor`` may be an :class:`AnchorBox`, a :class:`Box`, or an ``(N, 4)``
    array paired with an ``(N,)`` array of scales.
    """
    if isinstance(anchor, AnchorBox):
        anchor = anchor.base
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(~(s_arr > 0)):
        raise GeometryError("scale must be strictly positive")
    if isinstance(anchor, Box):
        return Box(anchor.x, anchor.y, anchor.w * float(s), anchor.h * float(s))
    a = np.asarray(anchor, dtype=np.float64)
    out = a.copy()
    out[..., 2] = a[..., 2] * s_arr
    out[..., 3] = a[..., 3] * s_arr
    return out


# -- box coding -------------------------------------------------------------

def decode_box(scaled, off):
    if isinstance(scaled, Box):
        if not all(math.isfinite(v) for v in off):
            raise GeometryError("non-finite offsets")
        dx, dy, dw, dh = off
        return Box(scaled.x + scaled.w * dx, scaled.y + scaled.h * dy,
                   scaled.w * math.exp(dw), scaled.h * math.exp(dh))
    a = np.asarray(scaled)
    d = np.asarray(off)
    if not np.all(np.isfinite(d)):
        raise GeometryError("non-finite offsets")
    out = np.empty(np.broadcast_shapes(a.shape, d.shape), dtype=np.result_type(a, d))
    out[..., 0] = a[..., 0] + a[..., 2] * d[..., 0]
    out[..., 1] = a[..., 1] + a[..., 3] * d[..., 1]
    out[..., 2] = a[..., 2] * np.exp(d[..., 2])
    out[..., 3] = a[..., 3] * np.exp(d[..., 3])
    return out


def encode_box(scaled, gt):
    """Offsets that :func:`decode_box` maps ``scaled`` onto ``gt``."""
    if isinstance(scaled, Box) and isinstance(gt, Box):
        if min(scaled.w, scaled.h, gt.w, gt.h) <= 0:
            raise GeometryError("degenerate box")
        return Offsets((gt.x - scaled.x) / scaled.w, (gt.y - scaled.y) / scaled.h,
                       math.log(gt.w / scaled.w), math.log(gt.h / scaled.h))
    a = np.asarray(scaled)
    g = np.asarray(gt)
    if np.any(a[..., 2:] <= 0) or np.any(g[..., 2:] <= 0):
        raise GeometryError("degenerate box")
    out = np.empty(np.broadcast_shapes(a.shape, g.shape), dtype=np.result_type(a, g))
    out[..., 0] = (g[..., 0] - a[..., 0]) / a[..., 2]
    out[..., 1] = (g[..., 1] - a[..., 1]) / a[..., 3]
    out[..., 2] = np.log(g[..., 2] / a[..., 2])
    out[..., 3] = np.log(g[..., 3] / a[..., 3])
    return out


def anchor_scale_gradient(anchor, off, upstream=(1.0, 1.0, 1.0, 1.0)):
    """d(loss)/d(s) through Eq.-1 scaling followed by box decoding.

    ``upstream`` holds d(loss)/d(x, y, w, h) of the decoded box.  With unit
    upstream this is ``(dx + e^dw) w0 + (dy + e^dh) h0``.  Array inputs
    return one value per anchor; summing those per cell is the caller's job.
    """
    if isinstance(anchor, AnchorBox):
        anchor = anchor.base
    a = np.asarray(anchor, dtype=np.float64)
    d = np.asarray(off)
    g = np.asarray(upstream)
    if not np.all(np.isfinite(d)):
        raise GeometryError("non-finite offsets")
    w0 = a[..., 2]
    h0 = a[..., 3]
    out = (g[..., 0] * w0 * d[..., 0] + g[..., 1] * h0 * d[..., 1]
           + g[..., 2] * w0 * np.exp(d[..., 2]) + g[..., 3] * h0 * np.exp(d[..., 3]))
    return float(out) if np.ndim(out) == 0 else out


# -- overlap ----------------------------------------------------------------

def to_corners(boxes):
    b = np.asarray(boxes, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def iou_matrix(a, b):
    """Pairwise IoU between ``(A, 4)`` and ``(B, 4)`` center-size boxes."""
    ca = to_corners(as_boxes(a).reshape(-1, 4))
    cb = to_corners(as_boxes(b).reshape(-1, 4))
    x1 = np.maximum(ca[:, None, 0], cb[None, :, 0])
    y1 = np.maximum(ca[:, None, 1], cb[None, :, 1])
    x2 = np.minimum(ca[:, None, 2], cb[None, :, 2])
    y2 = np.minimum(ca[:, None, 3], cb[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b):
    return float(iou_matrix(as_boxes(a), as_boxes(b))[0, 0])


def clip_boxes(boxes, width, height):
    """Clip center-size boxes to the image rectangle ``[0, width] x [0, height]``."""
    c = to_corners(boxes)
    c[..., 0::2] = np.clip(c[..., 0::2], 0, width)
    c[..., 1::2] = np.clip(c[..., 1::2], 0, height)
    out = np.empty_like(c)
    out[..., :2] = (c[..., :2] + c[..., 2:]) / 2
    out[..., 2:] = c[..., 2:] - c[..., :2]
    return out


# -- matching ---------------------------------------------------------------

def match_arrays(scaled_anchors, gts, pos_thresh=0.5):
    """Array form of :func:`match_anchors`.

    Returns ``(positive, gt_index, iou)``; ``gt_index`` is -1 for negatives.
    """
    if not 0 < pos_thresh < 1:
        raise GeometryError("pos_thresh must lie in (0, 1)")
    anchors = as_boxes(scaled_anchors).reshape(-1, 4)
    if len(anchors) == 0:
        raise GeometryError("no anchors to match")
    n = len(anchors)
    gts = as_boxes(gts).reshape(-1, 4)
    if len(gts) == 0:
        return np.zeros(n, bool), np.full(n, -1), np.zeros(n)
    ov = iou_matrix(anchors, gts)
    best_gt = np.argmax(ov, axis=1)
    best_ov = ov[np.arange(n), best_gt]
    positive = best_ov >= pos_thresh
    gt_index = np.where(positive, best_gt, -1)
    iou_out = best_ov.copy()
    # forced matches; a later gt only steals an anchor with strictly higher IoU
    forced_by = {}
    for g in range(len(gts)):
        a = int(np.argmax(ov[:, g]))
        prev = forced_by.get(a)
        if prev is None or ov[a, g] > ov[a, prev]:
            forced_by[a] = g
    for a, g in forced_by.items():
        positive[a] = True
        gt_index[a] = g
        iou_out[a] = ov[a, g]
    return positive, gt_index, iou_out


def match_anchors(scaled_anchors, gts, pos_thresh=0.5):
    positive, gt_index, ov = match_arrays(scaled_anchors, gts, pos_thresh)
    return [
        MatchAssignment(i, bool(p), int(g) if p else None, float(o))
        for i, (p, g, o) in enumerate(zip(positive, gt_index, ov))
    ]


# -- suppression ------------------------------------------------------------

def nms_indices(boxes, scores, iou_thresh):
    """Indices kept by greedy NMS, highest score first (stable on ties)."""
    boxes = as_boxes(boxes).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise GeometryError("non-finite scores")
    order = np.argsort(-scores, kind="stable")
    ov = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(boxes), bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ov[i] >= iou_thresh
    return keep


def nms(dets: Sequence, iou_thresh):
    if len(dets) == 0:
        return []
    boxes = as_boxes([d[0] for d in dets])
    scores = [d[1] for d in dets]
    return [dets[i] for i in nms_indices(boxes, scores, iou_thresh)]


# -- anchor accounting ------------------------------------------------------

def anchor_budget(single_layer, layer_sizes, n_c):
    """Anchor count for a one-map detector versus a pyramid over ``layer_sizes``.

    ``layer_sizes`` are cell counts D_i per feature map.
    """
    sizes = tuple(int(d) for d in layer_sizes)
    if not sizes:
        raise GeometryError("layer list is empty")
    if single_layer:
        return AnchorBudget(1, sizes[:1], n_c, sizes[0] * n_c)
    return AnchorBudget(len(sizes), sizes, n_c, sum(d * n_c for d in sizes))
