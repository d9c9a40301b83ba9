"""SGD with momentum and L2 weight decay."""

import numpy as np


def init_buffers(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def clip_by_global_norm(grads, max_norm):
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping; ``max_norm <= 0`` disables clipping.
    """
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        f = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(f)
    return norm


def sgd_step(params, grads, buffers, lr, momentum, weight_decay, lr_mult=None):
    """In-place update ``v <- mu v + g + wd w; w <- w - lr v``; returns ``params``.

    ``lr_mult`` maps a parameter-name prefix to a learning-rate factor.
    """
    lr_mult = lr_mult or {}
    for name, w in params.items():
        g = grads[name]
        v = buffers[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ValueError(f"{name}: shape mismatch {w.shape} / {g.shape} / {v.shape}")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        f = next((m for prefix, m in lr_mult.items() if name.startswith(prefix)), 1.0)
        w -= w.dtype.type(lr * f) * v
    return params
