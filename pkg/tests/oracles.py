"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports from the package; each function restates its rule
directly in plain Python.
"""

import itertools
import math

import numpy as np


def iou(a, b):
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def match(anchors, gts, thresh):
    """Positive flag and gt index per anchor (-1 for negatives)."""
    n = len(anchors)
    pos = [False] * n
    gidx = [-1] * n
    for a in range(n):
        best, best_g = -1.0, -1
        for g in range(len(gts)):
            v = iou(anchors[a], gts[g])
            if v > best:
                best, best_g = v, g
        if best_g >= 0 and best >= thresh:
            pos[a], gidx[a] = True, best_g
    owner = {}
    for g in range(len(gts)):
        best, best_a = -1.0, -1
        for a in range(n):
            v = iou(anchors[a], gts[g])
            if v > best:
                best, best_a = v, a
        if best_a not in owner or best > iou(anchors[best_a], gts[owner[best_a]]):
            owner[best_a] = g
    for a, g in owner.items():
        pos[a], gidx[a] = True, g
    return pos, gidx


def nms(boxes, scores, thresh):
    remaining = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    while remaining:
        i = remaining.pop(0)
        keep.append(i)
        remaining = [j for j in remaining if iou(boxes[i], boxes[j]) < thresh]
    return keep


def greedy_eval(dets, gts, thresh):
    """``(tp, fp, fn)`` summed over scenes, greedy by descending score."""
    tp = fp = fn = 0
    for (boxes, scores), g in zip(dets, gts):
        used = set()
        order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
        hits = 0
        for d in order:
            best, best_g = -1.0, None
            for k in range(len(g)):
                if k in used:
                    continue
                v = iou(boxes[d], g[k])
                if v > best:
                    best, best_g = v, k
            if best_g is not None and best >= thresh:
                used.add(best_g)
                hits += 1
        tp += hits
        fp += len(boxes) - hits
        fn += len(g) - hits
    return tp, fp, fn


def optimal_tp(boxes, gts, thresh):
    """Largest number of one-to-one det/gt pairs with IoU >= thresh (exhaustive)."""
    nd, ng = len(boxes), len(gts)
    ok = [[iou(boxes[d], gts[k]) >= thresh for k in range(ng)] for d in range(nd)]
    best = 0
    for perm in itertools.permutations(range(max(nd, ng)), min(nd, ng)):
        if nd <= ng:
            pairs = [(d, perm[d]) for d in range(nd)]
        else:
            pairs = [(perm[k], k) for k in range(ng)]
        best = max(best, sum(1 for d, k in pairs if d < nd and k < ng and ok[d][k]))
    return best


def bilinear(chan, h, w):
    H, W = len(chan), len(chan[0])
    h = min(max(h, 0.0), H - 1.0)
    w = min(max(w, 0.0), W - 1.0)
    h0, w0 = int(math.floor(h)), int(math.floor(w))
    h1, w1 = min(h0 + 1, H - 1), min(w0 + 1, W - 1)
    fh, fw = h - h0, w - w0
    return ((1 - fh) * (1 - fw) * chan[h0][w0] + (1 - fh) * fw * chan[h0][w1]
            + fh * (1 - fw) * chan[h1][w0] + fh * fw * chan[h1][w1])


def anchor_conv(x, kernel, bias, scale, alpha, d_h=1, d_w=1):
    """Loop form of the scale-dilated, row-blended convolution on ``(C, H, W)``."""
    C, H, W = x.shape
    c_out, _, kh, kw = kernel.shape
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for r in range(H):
            for c in range(W):
                s = float(scale[r, c])
                acc = float(bias[o])
                for ch in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            i, j = a - kh // 2, b - kw // 2
                            h, w = r + i * d_h * s, c + j * d_w * s
                            v = bilinear(x[ch], h, w)
                            if s > 1:
                                half = (s - 1) / 2
                                v = ((1 - alpha) * v + alpha / 2 * bilinear(x[ch], h - half, w)
                                     + alpha / 2 * bilinear(x[ch], h + half, w))
                            acc += kernel[o, ch, a, b] * v
                out[o, r, c] = acc
    return out


def dilated_conv(x, kernel, bias, d_h=1, d_w=1):
    """Plain dilated convolution with edge-replicated padding, by explicit loops."""
    C, H, W = x.shape
    c_out, _, kh, kw = kernel.shape
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for r in range(H):
            for c in range(W):
                acc = float(bias[o])
                for ch in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            rr = min(max(r + (a - kh // 2) * d_h, 0), H - 1)
                            cc = min(max(c + (b - kw // 2) * d_w, 0), W - 1)
                            acc += kernel[o, ch, a, b] * x[ch, rr, cc]
                out[o, r, c] = acc
    return out


def conv2d_same(x, kernel, bias):
    """Zero-padded stride-1 convolution of ``(N, C, H, W)`` by loops over taps."""
    N, C, H, W = x.shape
    c_out, _, kh, kw = kernel.shape
    xp = np.zeros((N, C, H + kh - 1, W + kw - 1))
    xp[:, :, kh // 2:kh // 2 + H, kw // 2:kw // 2 + W] = x
    out = np.zeros((N, c_out, H, W)) + np.asarray(bias)[None, :, None, None]
    for a in range(kh):
        for b in range(kw):
            patch = xp[:, :, a:a + H, b:b + W]
            out += np.einsum("nchw,oc->nohw", patch, kernel[:, :, a, b])
    return out
