"""Plain conv / ReLU / max-pool layers with hand-written backward passes.

All functions work on channels-last ``(N, H, W, C)`` batches, which keeps
im2col and the head's sampling matmuls free of transposes.  Each forward
returns a cache that the matching ``*_backward`` consumes.
"""

import numpy as np


def _im2col(x, kh, kw):
    N, H, W, C = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((N, H + 2 * ph, W + 2 * pw, C), dtype=x.dtype)
    xp[:, ph:ph + H, pw:pw + W] = x
    cols = np.empty((N, H, W, kh, kw, C), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b] = xp[:, a:a + H, b:b + W]
    return cols.reshape(N * H * W, kh * kw * C)


def _kmat(kernel):
    """``(c_out, c_in, kh, kw)`` -> ``(kh*kw*c_in, c_out)`` matching :func:`_im2col`."""
    return kernel.transpose(2, 3, 1, 0).reshape(-1, kernel.shape[0])


def conv2d(x, kernel, bias):
    """Odd-sized stride-1 convolution with zero 'same' padding."""
    N, H, W, C = x.shape
    c_out, c_in, kh, kw = kernel.shape
    if c_in != C:
        raise ValueError(f"conv expects {c_in} input channels, got {C}")
    cols = _im2col(x, kh, kw)
    out = cols @ _kmat(kernel) + bias
    return out.reshape(N, H, W, c_out), (x.shape, cols, kernel)


def conv2d_backward(g, cache, need_input=True):
    shape, cols, kernel = cache
    N, H, W, C = shape
    c_out, _, kh, kw = kernel.shape
    gmat = g.reshape(N * H * W, c_out)
    g_kernel = (cols.T @ gmat).reshape(kh, kw, C, c_out).transpose(3, 2, 0, 1)
    g_bias = gmat.sum(axis=0)
    if not need_input:
        return None, np.ascontiguousarray(g_kernel), g_bias
    gcols = (gmat @ _kmat(kernel).T).reshape(N, H, W, kh, kw, C)
    ph, pw = kh // 2, kw // 2
    gxp = np.zeros((N, H + 2 * ph, W + 2 * pw, C), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            gxp[:, a:a + H, b:b + W] += gcols[:, :, :, a, b]
    return gxp[:, ph:ph + H, pw:pw + W], np.ascontiguousarray(g_kernel), g_bias


def relu(x, mask=None):
    """``mask`` replays a stored activation pattern instead of thresholding ``x``."""
    if mask is None:
        mask = x > 0
        return np.maximum(x, 0, dtype=x.dtype), mask
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(g, mask):
    return np.where(mask, g, 0).astype(g.dtype, copy=False)


def _quads(x, Ho, Wo):
    return [x[:, a:2 * Ho:2, b:2 * Wo:2] for a in (0, 1) for b in (0, 1)]


def maxpool2(x, routes=None):
    """2x2 stride-2 max pooling; odd trailing rows/cols are dropped.

    ``routes`` replays a stored choice of winner per window.
    """
    N, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    if Ho == 0 or Wo == 0:
        raise ValueError(f"cannot pool a {H}x{W} map")
    q = _quads(x, Ho, Wo)
    if routes is not None:
        out = sum(np.where(hit, part, 0) for hit, part in zip(routes, q)).astype(x.dtype)
        return out, (x.shape, routes)
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    # route the gradient to the first maximum in (top-left, top-right, ...) order
    free = np.ones(out.shape, bool)
    routes = []
    for part in q:
        hit = free & (part == out)
        free &= ~hit
        routes.append(hit)
    return out, (x.shape, routes)


def maxpool2_backward(g, cache):
    shape, routes = cache
    Ho, Wo = g.shape[1:3]
    gx = np.zeros(shape, dtype=g.dtype)
    for (a, b), hit in zip(((0, 0), (0, 1), (1, 0), (1, 1)), routes):
        gx[:, a:2 * Ho:2, b:2 * Wo:2] = np.where(hit, g, 0)
    return gx
