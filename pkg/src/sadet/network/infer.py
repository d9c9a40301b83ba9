"""Multi-resolution inference."""

from __future__ import annotations

import numpy as np

from ..geometry import clip_boxes, nms_indices
from .loss import to_anchor_major
from .model import Detector


def resize_bilinear(image, out_h, out_w):
    """Resize ``(C, H, W)`` with half-pixel-centred bilinear sampling."""
    C, H, W = image.shape
    if (out_h, out_w) == (H, W):
        return image

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis(H, out_h)
    c0, c1, fc = axis(W, out_w)
    rows = image[:, r0] * (1 - fr)[None, :, None] + image[:, r1] * fr[None, :, None]
    return rows[:, :, c0] * (1 - fc) + rows[:, :, c1] * fc


def decode_detections(model: Detector, fwd, n=0):
    """All anchors of image ``n`` decoded with their learned scales.

    Returns ``(boxes (A, 4), scores (A,))`` in the forward pass's pixel frame.
    """
    conf, loc = fwd.head.conf[n], fwd.head.loc[n]
    H, W = conf.shape[:2]
    n_c = model.n_c
    anchors = model.anchors(H, W).copy()
    s = np.repeat(np.asarray(fwd.scale.value[n], np.float64).ravel(), n_c)
    anchors[:, 2:] *= s[:, None]
    logits = to_anchor_major(conf, 2).astype(np.float64)
    delta = to_anchor_major(loc, 4).astype(np.float64)
    scores = 1.0 / (1.0 + np.exp(logits[:, 0] - logits[:, 1]))
    delta[:, 2:] = np.clip(delta[:, 2:], -10, 10)
    boxes = np.empty_like(anchors)
    boxes[:, 0] = anchors[:, 0] + anchors[:, 2] * delta[:, 0]
    boxes[:, 1] = anchors[:, 1] + anchors[:, 3] * delta[:, 1]
    boxes[:, 2] = anchors[:, 2] * np.exp(delta[:, 2])
    boxes[:, 3] = anchors[:, 3] * np.exp(delta[:, 3])
    return boxes, scores


def infer(image, model: Detector, resolutions=(), conf_thresh=0.5, nms_thresh=0.3):
    """Detect boxes in one ``(3, H, W)`` image.

    Each entry of ``resolutions`` resizes the longer image side to that many
    pixels; an empty list means native size only.  Scores must be strictly
    above ``conf_thresh``.  Returns ``(boxes, scores)`` in original pixels.
    """
    image = np.asarray(image, dtype=model.dtype)
    _, H, W = image.shape
    all_boxes, all_scores = [], []
    for res in (tuple(resolutions) or (max(H, W),)):
        f = float(res) / max(H, W)
        h, w = max(int(round(H * f)), 4), max(int(round(W * f)), 4)
        fwd = model.forward(resize_bilinear(image, h, w)[None])
        boxes, scores = decode_detections(model, fwd)
        keep = scores > conf_thresh
        boxes, scores = boxes[keep], scores[keep]
        boxes[:, [0, 2]] *= W / w
        boxes[:, [1, 3]] *= H / h
        all_boxes.append(boxes)
        all_scores.append(scores)
    boxes = np.concatenate(all_boxes) if all_boxes else np.zeros((0, 4))
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    boxes = clip_boxes(boxes, W, H)
    ok = (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
    boxes, scores = boxes[ok], scores[ok]
    keep = nms_indices(boxes, scores, nms_thresh)
    return boxes[keep], scores[keep]
