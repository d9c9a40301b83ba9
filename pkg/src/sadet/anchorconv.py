"""Anchor convolution: a convolution whose sampling grid follows a scale map.

For an output cell at ``(c_h, c_w)`` with scale ``s`` the tap ``(i, j)`` reads
the input at ``(c_h + i*d_h*s, c_w + j*d_w*s)``.  When ``s > 1`` each tap
additionally blends two rows ``(s - 1)/2`` above and below the tap row::

    v = (1 - alpha) P(h, w) + alpha/2 P(h - (s-1)/2, w) + alpha/2 P(h + (s-1)/2, w)

For ``s <= 1`` only the tap row is read, with weight 1, so ``s == 1`` is an
ordinary dilated convolution.  All reads are bilinear with the coordinates
clamped to the map (edge replication).

Backward returns gradients for the input, kernel, bias and scale map.  The
sampled value is only piecewise smooth in ``s``: bilinear interpolation kinks
at integer coordinates and the row blend switches on at ``s = 1``.  At those
points the scale gradient is the mean of the left and right derivatives,
which is what a central difference converges to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    k_h: int = 1
    k_w: int = 5
    d_h: int = 1
    d_w: int = 1
    alpha: float = 0.5

    def __post_init__(self):
        if self.k_h < 1 or self.k_w < 1 or self.k_h % 2 == 0 or self.k_w % 2 == 0:
            raise ValueError(f"kernel extents must be odd and >= 1, got {self.k_h}x{self.k_w}")
        if self.d_h < 1 or self.d_w < 1:
            raise ValueError("dilations must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def taps(self):
        """Kernel offsets ``(i, j)`` in row-major kernel order."""
        rh, rw = self.k_h // 2, self.k_w // 2
        return [(i, j) for i in range(-rh, rh + 1) for j in range(-rw, rw + 1)]


@dataclass
class ConvParams:
    kernel: np.ndarray  # (c_out, c_in, k_h, k_w)
    bias: np.ndarray  # (c_out,)

    def check(self, spec):
        want = (spec.c_out, spec.c_in, spec.k_h, spec.k_w)
        if self.kernel.shape != want:
            raise ValueError(f"kernel shape {self.kernel.shape} != {want}")
        if self.bias.shape != (spec.c_out,):
            raise ValueError(f"bias shape {self.bias.shape} != {(spec.c_out,)}")


# -- scalar reference path ---------------------------------------------------

def sample_coords(c_h, c_w, i, j, spec, s):
    if not s > 0:
        raise ValueError("scale must be positive")
    return c_h + i * spec.d_h * s, c_w + j * spec.d_w * s


def bilinear_sample(channel, h, w):
    """Bilinear read of a 2-D map with coordinates clamped to the border."""
    H, W = channel.shape
    h = min(max(float(h), 0.0), H - 1.0)
    w = min(max(float(w), 0.0), W - 1.0)
    h0, w0 = int(np.floor(h)), int(np.floor(w))
    h1, w1 = min(h0 + 1, H - 1), min(w0 + 1, W - 1)
    fh, fw = h - h0, w - w0
    return ((1 - fh) * ((1 - fw) * channel[h0, w0] + fw * channel[h0, w1])
            + fh * ((1 - fw) * channel[h1, w0] + fw * channel[h1, w1]))


def _blend(s, alpha):
    """Blend weights of the (tap row, row above, row below) samples."""
    if s > 1:
        return (1.0 - alpha, alpha / 2, alpha / 2)
    return (1.0, 0.0, 0.0)


def build_feature_vector(inp, c, y, s, spec):
    """Feature vector of channel ``c`` at output cell ``y = (row, col)``.

    Length ``k_h * k_w`` in kernel order.
    """
    c_h, c_w = y
    chan = inp[c]
    b = _blend(s, spec.alpha)
    half = (s - 1) / 2
    out = np.empty(spec.k_h * spec.k_w, dtype=inp.dtype)
    for t, (i, j) in enumerate(spec.taps):
        h, w = sample_coords(c_h, c_w, i, j, spec, s)
        v = b[0] * bilinear_sample(chan, h, w)
        if b[1]:
            v += b[1] * bilinear_sample(chan, h - half, w)
            v += b[2] * bilinear_sample(chan, h + half, w)
        out[t] = v
    return out


# -- vectorised path -----------------------------------------------------------

def _axis(coord, extent):
    clamped = np.clip(coord, 0.0, extent - 1.0)
    base = np.floor(clamped)
    frac = clamped - base
    inside = (coord >= 0.0) & (coord <= extent - 1.0)
    return base.astype(np.int64), frac, inside


def _slopes(frac, inside, rate, b_right, b_left):
    """Weights of the up (base -> base+1) and down (base-1 -> base) slopes.

    Off-grid only the up slope exists; on the grid the right derivative uses
    the slope in the direction of motion and the left one the other slope.
    """
    on_grid = frac == 0.0
    pos = rate > 0
    neg = rate < 0
    up = np.where(on_grid, 0.5 * rate * (b_right * pos + b_left * neg),
                  0.5 * rate * (b_right + b_left))
    dn = np.where(on_grid, 0.5 * rate * (b_right * neg + b_left * pos), 0.0)
    return np.where(inside, up, 0.0), np.where(inside, dn, 0.0)


class SamplePlan:
    """Where and how every tap of every output cell reads its input.

    Rows of the sampling matrices are ordered (image, cell, tap); columns
    index the flattened ``N*H*W`` input grid.  ``value_matrix`` maps the
    input to tap values, ``dscale_matrix`` to d(tap value)/d(scale).
    """

    def __init__(self, scale, spec):
        scale = np.asarray(scale, dtype=np.float64)
        if scale.ndim == 2:
            scale = scale[None]
        if not np.all(scale > 0):
            raise ValueError("scale map must be strictly positive")
        N, H, W = scale.shape
        self.shape = (N, H, W)
        self.spec = spec
        taps = np.asarray(spec.taps, dtype=np.float64)
        self.n_taps = len(taps)
        ti = taps[:, 0] * spec.d_h
        tj = taps[:, 1] * spec.d_w
        rows, cols = np.meshgrid(np.arange(H, dtype=np.float64),
                                 np.arange(W, dtype=np.float64), indexing="ij")
        s = scale.reshape(N, H * W, 1)
        hc = rows.reshape(1, -1, 1) + ti * s  # (N, P, T)
        wc = cols.reshape(1, -1, 1) + tj * s
        half = (s - 1.0) / 2.0
        self.h = np.stack([hc, hc - half, hc + half], axis=-1)  # (N, P, T, 3)
        self.w = wc[..., None]  # (N, P, T, 1), shared by the three rows

        a = spec.alpha
        blend_on = np.array([1.0 - a, a / 2, a / 2])
        blend_off = np.array([1.0, 0.0, 0.0])
        self.b_value = np.where((s > 1.0)[..., None], blend_on, blend_off)  # (N, P, 1, 3)
        # the row blend switches on at s == 1: the right derivative sees it
        self.b_right = np.where((s == 1.0)[..., None], blend_on, self.b_value)
        self.rate_h = np.stack([ti, ti - 0.5, ti + 0.5], axis=-1)  # (T, 3)
        self.rate_w = tj[:, None]  # (T, 1)
        self._value = None
        self._dscale = None

    def _csr(self, index, weights, dtype):
        N, H, W = self.shape
        n_rows = N * H * W * self.n_taps
        k = index.size // n_rows
        img = (np.arange(N) * (H * W)).reshape((N,) + (1,) * (index.ndim - 1))
        cols = (index + img).reshape(-1)
        indptr = np.arange(0, n_rows * k + 1, k)
        return sparse.csr_matrix((weights.reshape(-1).astype(dtype), cols, indptr),
                                 shape=(n_rows, N * H * W))

    def value_matrix(self, dtype=np.float64):
        if self._value is None or self._value.dtype != dtype:
            N, H, W = self.shape
            hb, fh, _ = _axis(self.h, H)
            wb, fw, _ = _axis(self.w, W)
            h1 = np.minimum(hb + 1, H - 1)
            w1 = np.minimum(wb + 1, W - 1)
            wb = np.broadcast_to(wb, hb.shape)
            w1 = np.broadcast_to(w1, hb.shape)
            fw = np.broadcast_to(fw, hb.shape)
            b = self.b_value
            index = np.stack([hb * W + wb, hb * W + w1, h1 * W + wb, h1 * W + w1], axis=-1)
            weights = np.stack([(1 - fh) * (1 - fw), (1 - fh) * fw, fh * (1 - fw), fh * fw],
                               axis=-1) * b[..., None]
            self._value = self._csr(index, weights, dtype)
        return self._value

    def dscale_matrix(self, dtype=np.float64):
        if self._dscale is None or self._dscale.dtype != dtype:
            N, H, W = self.shape
            hb, fh, h_in = _axis(self.h, H)
            wb, fw, w_in = _axis(self.w, W)
            up_h, dn_h = _slopes(fh, h_in, self.rate_h, self.b_right, self.b_value)
            up_w, dn_w = _slopes(fw, w_in, self.rate_w, self.b_right, self.b_value)
            zero = np.zeros_like(fh)
            # 3-point weights over base-1, base, base+1 along each axis
            h_interp = np.stack([zero, 1 - fh, fh], axis=-1)
            fw = np.broadcast_to(fw, fh.shape)
            w_interp = np.stack([zero, 1 - fw, fw], axis=-1)
            h_deriv = np.stack([-dn_h, dn_h - up_h, up_h], axis=-1)
            w_deriv = np.stack([-dn_w, dn_w - up_w, up_w], axis=-1)
            weights = (h_deriv[..., :, None] * w_interp[..., None, :]
                       + h_interp[..., :, None] * w_deriv[..., None, :])
            offs = np.array([-1, 0, 1])
            rr = np.clip(hb[..., None] + offs, 0, H - 1)
            cc = np.clip(np.broadcast_to(wb, hb.shape)[..., None] + offs, 0, W - 1)
            index = rr[..., :, None] * W + cc[..., None, :]
            self._dscale = self._csr(index, weights, dtype)
        return self._dscale


def plan_samples(scale, spec):
    return SamplePlan(scale, spec)


@dataclass
class ForwardContext:
    spec: ConvSpec
    plan: SamplePlan
    x_flat: np.ndarray  # (N*H*W, C) channels-last input
    columns: np.ndarray  # (N*P, T*C) sampled feature vectors, tap-major
    kernel: np.ndarray  # (c_out, T*C)


def _tap_major(kernel):
    c_out = kernel.shape[0]
    return kernel.transpose(0, 2, 3, 1).reshape(c_out, -1)


def forward_nhwc(x, params, scale_map, spec, plan=None):
    """Channels-last core: ``x`` is ``(N, H, W, C)``, output ``(N, H, W, c_out)``."""
    params.check(spec)
    N, H, W, C = x.shape
    if C != spec.c_in:
        raise ValueError(f"input has {C} channels, spec expects {spec.c_in}")
    if plan is None:
        smap = np.asarray(scale_map)
        if smap.ndim == 2:
            smap = smap[None]
        if smap.shape[1:] != (H, W) or smap.shape[0] not in (1, N):
            raise ValueError(f"scale map shape {smap.shape} does not fit a {H}x{W} input")
        plan = SamplePlan(np.broadcast_to(smap, (N, H, W)), spec)
    elif plan.shape != (N, H, W):
        raise ValueError("sample plan was built for a different input shape")
    T = plan.n_taps
    x_flat = np.ascontiguousarray(x.reshape(N * H * W, C))
    taps = plan.value_matrix(x.dtype) @ x_flat  # (N*P*T, C)
    columns = taps.reshape(N * H * W, T * C)
    kmat = _tap_major(params.kernel).astype(x.dtype, copy=False)
    out = columns @ kmat.T + params.bias.astype(x.dtype, copy=False)
    ctx = ForwardContext(spec, plan, x_flat, columns, kmat)
    return out.reshape(N, H, W, spec.c_out), ctx


def backward_nhwc(g_out, ctx, need_scale=True):
    if ctx is None:
        raise ValueError("backward needs the context returned by forward")
    spec, plan = ctx.spec, ctx.plan
    N, H, W = plan.shape
    C = spec.c_in
    T = plan.n_taps
    gmat = g_out.reshape(N * H * W, spec.c_out)
    g_kernel = (gmat.T @ ctx.columns).reshape(spec.c_out, spec.k_h, spec.k_w, C)
    g_kernel = np.ascontiguousarray(g_kernel.transpose(0, 3, 1, 2))
    g_bias = gmat.sum(axis=0)
    g_taps = (gmat @ ctx.kernel).reshape(N * H * W * T, C)
    g_in = (plan.value_matrix(g_taps.dtype).T @ g_taps).reshape(N, H, W, C)
    g_scale = None
    if need_scale:
        d_taps = plan.dscale_matrix(g_taps.dtype) @ ctx.x_flat  # (N*P*T, C)
        g_scale = np.einsum("rc,rc->r", d_taps, g_taps).reshape(N * H * W, T).sum(axis=1)
        g_scale = g_scale.reshape(N, H, W)
    return g_in, g_kernel, g_bias, g_scale


def forward(inp, params, scale_map, spec, plan=None):
    """Anchor convolution over ``(C, H, W)`` or ``(N, C, H, W)`` input.

    Returns ``(output, ctx)``; the output has the input's spatial size.
    """
    single = inp.ndim == 3
    x = inp[None] if single else inp
    out, ctx = forward_nhwc(x.transpose(0, 2, 3, 1), params, scale_map, spec, plan)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return (out[0] if single else out), ctx


def backward(g_out, ctx, need_scale=True):
    """Gradients ``(g_input, g_kernel, g_bias, g_scale)`` of an earlier forward.

    Layouts mirror :func:`forward`; ``g_scale`` is ``None`` unless ``need_scale``.
    """
    single = g_out.ndim == 3
    g = g_out[None] if single else g_out
    g_in, g_kernel, g_bias, g_scale = backward_nhwc(
        np.ascontiguousarray(g.transpose(0, 2, 3, 1)), ctx, need_scale)
    g_in = np.ascontiguousarray(g_in.transpose(0, 3, 1, 2))
    if single:
        g_in = g_in[0]
        g_scale = None if g_scale is None else g_scale[0]
    return g_in, g_kernel, g_bias, g_scale


def dilated_conv(inp, kernel, bias, d_h=1, d_w=1):
    """Stride-1 'same' dilated convolution with edge-replicated borders.

    The scale-free baseline the Anchor convolution reduces to at ``s == 1``.
    """
    single = inp.ndim == 3
    x = inp[None] if single else inp
    N, C, H, W = x.shape
    c_out, _, k_h, k_w = kernel.shape
    ph, pw = (k_h // 2) * d_h, (k_w // 2) * d_w
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge")
    cols = np.empty((N, C, k_h, k_w, H, W), dtype=x.dtype)
    for a in range(k_h):
        for b in range(k_w):
            cols[:, :, a, b] = xp[:, :, a * d_h:a * d_h + H, b * d_w:b * d_w + W]
    cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(N * H * W, -1)
    out = cols @ kernel.reshape(c_out, -1).T + bias
    out = np.ascontiguousarray(out.reshape(N, H, W, c_out).transpose(0, 3, 1, 2))
    return out[0] if single else out
