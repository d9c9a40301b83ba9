"""The detector: backbone -> scale map -> Anchor-convolution head.

Images come in as ``(N, 3, H, W)``; everything after the first layer is
channels-last, so head outputs are ``(N, H, W, k*Nc)`` with channel
``k*a + j`` holding component ``j`` of anchor ``a`` in that cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import anchorconv
from ..geometry import anchor_grid
from ..tensor import dtype_for
from . import layers

STRIDE = 4
S_MIN = 1e-3

BACKBONE = ("conv1", "conv2", "conv3", "conv4")
POOL_AFTER = {"conv1", "conv2"}


@dataclass
class ScaleMap:
    raw: np.ndarray  # (N, H, W) pre-activation
    value: np.ndarray  # (N, H, W) s = clamp(exp(raw))
    grad: np.ndarray | None = None  # d(loss)/d(value)
    slope: np.ndarray | None = None  # d(value)/d(raw)


@dataclass
class HeadOutput:
    conf: np.ndarray  # (N, H, W, 2*Nc)
    loc: np.ndarray  # (N, H, W, 4*Nc)


@dataclass
class Forward:
    images: np.ndarray
    feats: np.ndarray  # (N, H, W, C)
    scale: ScaleMap
    head: HeadOutput
    caches: dict


def param_shapes(cfg):
    C = cfg.channels
    nc = cfg.n_anchors_per_cell
    shapes = {}
    c_in = 3
    for name in BACKBONE:
        shapes[f"{name}.w"] = (C, c_in, 3, 3)
        shapes[f"{name}.b"] = (C,)
        c_in = C
    shapes["scale.w"] = (1, C, 3, 3)
    shapes["scale.b"] = (1,)
    shapes["cls.w"] = (2 * nc, C, 1, 5)
    shapes["cls.b"] = (2 * nc,)
    shapes["loc.w"] = (4 * nc, C, 1, 5)
    shapes["loc.b"] = (4 * nc,)
    return shapes


def init_params(cfg, rng):
    """He-initialised backbone, small random head, zero scale regression (s = 1)."""
    dtype = dtype_for(cfg.precision)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name.startswith("scale."):
            params[name] = np.zeros(shape, dtype)
        elif name.startswith(("cls.", "loc.")):
            params[name] = (rng.standard_normal(shape) * 0.01).astype(dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
    return params


class Detector:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params
        self.dtype = dtype_for(cfg.precision)
        nc = cfg.n_anchors_per_cell
        self.spec = anchorconv.ConvSpec(cfg.channels, 6 * nc, 1, 5, 1, 1, cfg.alpha)
        self._anchor_cache = {}

    @classmethod
    def create(cls, cfg, rng):
        return cls(cfg, init_params(cfg, rng))

    @property
    def n_c(self):
        return self.cfg.n_anchors_per_cell

    def anchors(self, map_h, map_w):
        key = (map_h, map_w)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = anchor_grid(map_h, map_w, STRIDE, self.cfg.base_size,
                                                  self.cfg.aspect_ratios)
        return self._anchor_cache[key]

    # -- forward ---------------------------------------------------------

    def backbone_forward(self, images, patterns=None):
        """``patterns`` (from :meth:`activation_patterns`) freezes ReLU and pooling choices."""
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[2] < STRIDE or x.shape[3] < STRIDE:
            raise ValueError(f"image {x.shape[2]}x{x.shape[3]} is smaller than the stride {STRIDE}")
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        caches = []
        for k, name in enumerate(BACKBONE):
            mask, routes = (None, None) if patterns is None else patterns[k]
            x, conv_cache = layers.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])
            x, mask = layers.relu(x, mask)
            pool_cache = None
            if name in POOL_AFTER:
                x, pool_cache = layers.maxpool2(x, routes)
            caches.append((conv_cache, mask, pool_cache))
        return x, caches

    def scale_regression(self, feats, image_hw, raw=None):
        """Scale map from features; ``raw`` overrides the regressed pre-activation."""
        N, H, W, _ = feats.shape
        s_max = float(max(image_hw))
        if not self.cfg.scale_adaptive:
            ones = np.ones((N, H, W), self.dtype)
            return ScaleMap(np.zeros_like(ones), ones, slope=np.zeros_like(ones)), None
        cache = None
        if raw is None:
            z, cache = layers.conv2d(feats, self.params["scale.w"], self.params["scale.b"])
            z = z[..., 0]
        else:
            z = np.asarray(raw, dtype=self.dtype)
        lo, hi = math.log(S_MIN), math.log(s_max)
        inside = (z > lo) & (z < hi)
        s = np.exp(np.clip(z, lo, hi)).astype(self.dtype)
        s = np.clip(s, S_MIN, s_max)
        return ScaleMap(z, s, slope=np.where(inside, s, 0).astype(self.dtype)), cache

    def _head_kernel(self):
        p = self.params
        kernel = np.concatenate([p["cls.w"], p["loc.w"]], axis=0)
        bias = np.concatenate([p["cls.b"], p["loc.b"]], axis=0)
        return anchorconv.ConvParams(kernel, bias)

    def detection_head(self, feats, scale_value):
        conv_scale = scale_value if self.cfg.anchor_conv else np.ones_like(scale_value)
        out, ctx = anchorconv.forward_nhwc(feats, self._head_kernel(), conv_scale, self.spec)
        k = 2 * self.n_c
        return HeadOutput(out[..., :k], out[..., k:]), ctx

    def forward(self, images, raw_scale=None, patterns=None):
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim == 3:
            images = images[None]
        feats, bb_caches = self.backbone_forward(images, patterns)
        scale, scale_cache = self.scale_regression(feats, images.shape[2:], raw=raw_scale)
        head, head_ctx = self.detection_head(feats, scale.value)
        caches = {"backbone": bb_caches, "scale": scale_cache, "head": head_ctx}
        return Forward(images, feats, scale, head, caches)

    @staticmethod
    def activation_patterns(fwd):
        """ReLU masks and pooling routes of a forward pass, for replay."""
        return [(mask, None if pool is None else pool[1])
                for _, mask, pool in fwd.caches["backbone"]]

    # -- backward --------------------------------------------------------

    def backward(self, fwd, g_conf, g_loc, g_scale_anchor=None):
        """Parameter gradients plus d(loss)/d(scale raw).

        ``g_scale_anchor`` is the anchor-path gradient on the scale values;
        the convolution-path gradient is added here.
        """
        cfg = self.cfg
        grads = {}
        g_out = np.concatenate([g_conf, g_loc], axis=-1)
        want_conv_path = cfg.scale_adaptive and cfg.anchor_conv and cfg.scale_grad_conv
        g_feats, gk, gb, g_s_conv = anchorconv.backward_nhwc(g_out, fwd.caches["head"],
                                                        need_scale=want_conv_path)
        k = 2 * self.n_c
        grads["cls.w"], grads["loc.w"] = gk[:k], gk[k:]
        grads["cls.b"], grads["loc.b"] = gb[:k], gb[k:]

        g_s = np.zeros_like(fwd.scale.value)
        if cfg.scale_adaptive:
            if g_scale_anchor is not None and cfg.scale_grad_anchor:
                g_s = g_s + g_scale_anchor
            if g_s_conv is not None:
                g_s = g_s + cfg.scale_grad_conv_weight * g_s_conv
        fwd.scale.grad = g_s
        g_raw = g_s * fwd.scale.slope

        scale_cache = fwd.caches["scale"]
        if scale_cache is not None:
            gf, grads["scale.w"], grads["scale.b"] = layers.conv2d_backward(g_raw[..., None], scale_cache)
            g_feats = g_feats + gf
        else:
            grads["scale.w"] = np.zeros_like(self.params["scale.w"])
            grads["scale.b"] = np.zeros_like(self.params["scale.b"])

        g = g_feats
        for name, (conv_cache, mask, pool_cache) in zip(reversed(BACKBONE),
                                                        reversed(fwd.caches["backbone"])):
            if pool_cache is not None:
                g = layers.maxpool2_backward(g, pool_cache)
            g = layers.relu_backward(g, mask)
            # the image gradient is never needed
            g, grads[f"{name}.w"], grads[f"{name}.b"] = layers.conv2d_backward(
                g, conv_cache, need_input=name != BACKBONE[0])
        return {k: grads[k].astype(self.dtype, copy=False) for k in self.params}, g_raw
