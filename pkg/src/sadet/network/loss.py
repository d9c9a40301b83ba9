"""Joint confidence + localisation loss with hand-derived gradients.

Confidence is a two-class softmax cross-entropy over every anchor; negatives
are down-weighted by ``neg_weight`` instead of being mined.  Localisation is a
smooth-L1 on the offsets of the *decoded* box relative to its ground truth::

    r = encode_box(gt, decode_box(apply_scale(anchor, s), delta))

For the size terms this equals ``delta - encode_box(scaled_anchor, gt)``; the
center terms are normalised by the ground-truth size rather than the anchor
size.  Writing the residual through the decoded box makes d(loss)/d(s) the
per-coordinate chain rule of box decoding (see
:func:`sadet.geometry.anchor_scale_gradient`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import anchor_scale_gradient, match_arrays


@dataclass
class LossBreakdown:
    total: float
    conf_term: float
    loc_term: float
    n_matched: int
    beta: float
    neg_weight: float


@dataclass
class LossGrads:
    conf: np.ndarray  # same layout as the head's conf output
    loc: np.ndarray
    scale: np.ndarray  # anchor-path d(loss)/d(s), (N, H, W)


def smooth_l1(r):
    a = np.abs(r)
    return np.where(a < 1, 0.5 * r * r, a - 0.5)


def smooth_l1_grad(r):
    return np.clip(r, -1.0, 1.0)


def to_anchor_major(x, per_anchor):
    """``(H, W, k*Nc)`` head block -> ``(H*W*Nc, k)``."""
    return x.reshape(-1, per_anchor)


def from_anchor_major(x, H, W):
    return x.reshape(H, W, -1)


def match_batch(anchors0, scale_value, gts_list, n_c, pos_iou):
    """Positive masks and gt indices per image, using the current scales."""
    out = []
    for n, gts in enumerate(gts_list):
        s_a = np.repeat(np.asarray(scale_value[n], np.float64).ravel(), n_c)
        scaled = anchors0.copy()
        scaled[:, 2:] *= s_a[:, None]
        pos, gidx, _ = match_arrays(scaled, gts, pos_iou)
        out.append((pos, gidx))
    return out


def compute_loss(head, scale_value, anchors0, gts_list, cfg, matches=None):
    """Loss over a batch plus gradients w.r.t. head outputs and (anchor path) scales.

    ``matches`` freezes the positive/negative assignment; by default it is
    recomputed from the current scales.  Returns ``(breakdown, grads, matches)``.
    """
    conf, loc = head.conf, head.loc
    N, H, W, _ = conf.shape
    n_c = cfg.n_anchors_per_cell
    A = H * W * n_c
    if len(anchors0) != A:
        raise ValueError(f"{len(anchors0)} anchors for a {H}x{W}x{n_c} head")
    if A == 0:
        raise ValueError("no anchors")
    dtype = conf.dtype
    anchors0 = np.asarray(anchors0, dtype=dtype)
    if matches is None:
        matches = match_batch(anchors0, scale_value, gts_list, n_c, cfg.pos_iou)

    g_conf = np.empty_like(conf)
    g_loc = np.zeros_like(loc)
    g_scale = np.zeros((N, H, W), dtype=dtype)
    conf_sum = 0.0
    loc_sum = 0.0
    n_pos = 0
    neg_only = 0.0
    for n in range(N):
        pos, gidx = matches[n]
        logits = to_anchor_major(conf[n], 2)
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        z = e.sum(axis=1, keepdims=True)
        prob = e / z
        label = pos.astype(np.int64)
        ce = (m[:, 0] + np.log(z[:, 0])) - logits[np.arange(A), label]
        weight = np.where(pos, 1.0, cfg.neg_weight).astype(dtype)
        conf_sum += float(np.dot(weight, ce))
        neg_only += float(cfg.neg_weight * ce[~pos].sum())
        dlogits = prob
        dlogits[np.arange(A), label] -= 1
        g_conf[n] = from_anchor_major(dlogits * weight[:, None], H, W)

        idx = np.flatnonzero(pos)
        n_pos += len(idx)
        if len(idx) == 0:
            continue
        s_a = np.repeat(scale_value[n].ravel(), n_c)[idx].astype(dtype)
        base = anchors0[idx]
        aw, ah = base[:, 2] * s_a, base[:, 3] * s_a
        delta = to_anchor_major(loc[n], 4)[idx]
        gt = np.asarray(gts_list[n], dtype=dtype)[gidx[idx]]
        px = base[:, 0] + aw * delta[:, 0]
        py = base[:, 1] + ah * delta[:, 1]
        pw = aw * np.exp(delta[:, 2])
        ph = ah * np.exp(delta[:, 3])
        r = np.stack([(px - gt[:, 0]) / gt[:, 2], (py - gt[:, 1]) / gt[:, 3],
                      np.log(pw / gt[:, 2]), np.log(ph / gt[:, 3])], axis=1)
        loc_sum += float(smooth_l1(r).sum())
        dr = smooth_l1_grad(r)
        dbox = np.stack([dr[:, 0] / gt[:, 2], dr[:, 1] / gt[:, 3], dr[:, 2] / pw, dr[:, 3] / ph], axis=1)
        ddelta = np.stack([dbox[:, 0] * aw, dbox[:, 1] * ah, dbox[:, 2] * pw, dbox[:, 3] * ph], axis=1)
        full = np.zeros((A, 4), dtype=dtype)
        full[idx] = ddelta
        g_loc[n] = from_anchor_major(full, H, W)
        ds = anchor_scale_gradient(base, delta, dbox)
        g_scale[n] = np.bincount(idx // n_c, weights=ds, minlength=H * W).reshape(H, W)

    beta = cfg.beta
    if n_pos > 0:
        total = (conf_sum + beta * loc_sum) / n_pos
        g_conf /= n_pos
        g_loc *= beta / n_pos
        g_scale *= beta / n_pos
    else:
        total = neg_only / (A * N)
        g_conf /= A * N
    breakdown = LossBreakdown(total, conf_sum, loc_sum, n_pos, beta, cfg.neg_weight)
    return breakdown, LossGrads(g_conf, g_loc, g_scale.astype(dtype)), matches
