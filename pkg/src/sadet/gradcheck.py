"""Finite-difference checks of every hand-written backward pass.

Errors are reported per gradient tensor as ``max|analytic - numeric|``
divided by the larger of the two tensors' max magnitudes.  Bilinear sampling
has kinks wherever a sample lands on the grid; there the analytic gradient
is the mean of the one-sided slopes and a central difference agrees with it
only up to O(step), so a per-element ratio would be dominated by entries
that are small for unrelated reasons.
"""

from __future__ import annotations

import numpy as np

from . import anchorconv
from .network.config import TrainConfig
from .network.model import Detector, init_params
from .network.train import objective

TOLERANCE = 1e-4
CONV_SCALES = (0.5, 1.0, 1.7, 3.0)


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if denom == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / denom)


def numeric_grad(f, x, step):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f()
        flat[k] = orig - step
        down = f()
        flat[k] = orig
        g.reshape(-1)[k] = (up - down) / (2 * step)
    return g


def check_anchorconv(rng, step=1e-5, dtype=np.float64,
                     shapes=((1, 3, 9, 9), (2, 4, 9, 9)), alphas=(0.0, 0.5, 1.0), c_out=2):
    """Worst error per gradient class over random anchor-conv cases."""
    worst = {"input": 0.0, "kernel": 0.0, "bias": 0.0, "scale": 0.0}
    for shape in shapes:
        N, C, H, W = shape
        for alpha in alphas:
            spec = anchorconv.ConvSpec(C, c_out, 1, 5, 1, 1, alpha)
            x = rng.standard_normal(shape).astype(dtype)
            params = anchorconv.ConvParams(rng.standard_normal((c_out, C, 1, 5)).astype(dtype),
                                           rng.standard_normal(c_out).astype(dtype))
            smap = rng.choice(CONV_SCALES, size=(N, H, W)).astype(dtype)
            out, ctx = anchorconv.forward(x, params, smap, spec)
            g_out = rng.standard_normal(out.shape).astype(dtype)
            g_in, g_k, g_b, g_s = anchorconv.backward(g_out, ctx)

            def loss():
                return float((anchorconv.forward(x, params, smap, spec)[0] * g_out).sum())

            for name, analytic, target in (("input", g_in, x), ("kernel", g_k, params.kernel),
                                           ("bias", g_b, params.bias), ("scale", g_s, smap)):
                err = relative_error(analytic, numeric_grad(loss, target, step))
                worst[name] = max(worst[name], err)
    return worst


def tiny_model(rng, precision=64):
    """Randomised small detector: 32x32 images -> 8x8 map, two anchors per cell."""
    cfg = TrainConfig(precision=precision, channels=4, aspect_ratios=(2.0, 4.0), base_size=8.0,
                      scale_grad_anchor=True, scale_grad_conv=True)
    params = init_params(cfg, rng)
    for name, p in params.items():
        spread = 0.1 if name.startswith("scale.") else 0.3
        p[...] = rng.standard_normal(p.shape) * spread
    return Detector(cfg, params)


def tiny_batch(rng, dtype):
    image = rng.random((1, 3, 32, 32)).astype(dtype)
    gts = [np.array([[12.0, 10.0, 14.0, 5.0], [21.0, 22.0, 10.0, 4.0]])]
    return image, gts


def check_model(rng, step=1e-5, precision=64):
    """Worst error for every parameter tensor and for the raw scale map.

    Anchor matching and the backbone's ReLU/pooling pattern are frozen at
    the unperturbed point: with a step of 1e-5 and tens of thousands of
    activations, some pre-activation would otherwise straddle zero.
    """
    model = tiny_model(rng, precision)
    image, gts = tiny_batch(rng, model.dtype)
    _, grads, fwd, _, matches = objective(model, image, gts)
    patterns = model.activation_patterns(fwd)

    def loss():
        return objective(model, image, gts, matches=matches, patterns=patterns)[0].total

    worst = {}
    for name, p in model.params.items():
        worst[f"param:{name}"] = relative_error(grads[name], numeric_grad(loss, p, step))

    raw = rng.normal(0.0, 0.4, (1, 8, 8)).astype(model.dtype)
    _, _, _, g_raw, matches = objective(model, image, gts, raw_scale=raw, patterns=patterns)
    num = numeric_grad(lambda: objective(model, image, gts, matches=matches, raw_scale=raw,
                                         patterns=patterns)[0].total, raw, step)
    worst["scale_raw"] = relative_error(g_raw, num)
    return worst


def run_all(seed=0, precision=64, step=1e-5):
    """Both suites; returns ``{gradient class: worst relative error}``."""
    rng = np.random.default_rng(seed)
    dtype = np.float64 if precision == 64 else np.float32
    results = {f"anchorconv:{k}": v for k, v in check_anchorconv(rng, step, dtype).items()}
    results.update(check_model(rng, step, precision))
    return results
