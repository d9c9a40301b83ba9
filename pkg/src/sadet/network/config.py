"""Run configuration: a flat ``key = value`` file mapped onto :class:`TrainConfig`."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    def __init__(self, msg, source=None, line=None, key=None):
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)
        self.source = source
        self.line = line
        self.key = key


@dataclass
class TrainConfig:
    # optimisation
    seed: int = 0
    precision: int = 32
    iterations: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    lr_decayed: float = 1e-4
    lr_decay_iter: int = 4000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_iters: int = 0
    grad_clip: float = 0.0
    scale_lr_mult: float = 1.0
    scale_freeze_iters: int = 0
    # loss
    beta: float = 1.0
    neg_weight: float = 0.125
    pos_iou: float = 0.5
    # model
    channels: int = 32
    alpha: float = 0.5
    base_size: float = 16.0
    aspect_ratios: tuple = (2.0, 3.5, 6.0)
    scale_adaptive: bool = True
    anchor_conv: bool = True
    scale_grad_anchor: bool = True
    # off by default: in training the conv path drives the scale map into the clamp; see README
    scale_grad_conv: bool = False
    scale_grad_conv_weight: float = 1.0
    # data
    data_seed: int = 1234
    n_train: int = 2000
    n_test: int = 100
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 4
    min_width: float = 8.0
    max_width: float = 48.0
    min_aspect: float = 2.0
    max_aspect: float = 5.0
    min_height: int = 4
    background: str = "mixed"
    glyph: str = "striped"
    noise: float = 0.03
    flip: bool = True
    # inference / logging
    conf_thresh: float = 0.5
    nms_thresh: float = 0.3
    resolutions: tuple = ()
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}", key="precision")
        positive = ("batch_size", "lr", "lr_decayed", "channels", "base_size", "image_size",
                    "min_width", "max_width", "min_aspect", "max_aspect", "min_height")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=name)
        for name in ("iterations", "lr_decay_iter", "weight_decay", "neg_weight", "beta",
                     "n_train", "n_test", "min_objects", "noise", "warmup_iters",
                     "grad_clip", "scale_lr_mult", "scale_freeze_iters", "scale_grad_conv_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", key="momentum")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]", key="alpha")
        if not 0 < self.pos_iou < 1:
            raise ConfigError("pos_iou must lie in (0, 1)", key="pos_iou")
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise ConfigError("aspect_ratios must be a non-empty list of positive numbers",
                              key="aspect_ratios")
        if self.max_objects < self.min_objects:
            raise ConfigError("max_objects < min_objects", key="max_objects")
        if self.max_width < self.min_width or self.max_width > self.image_size:
            raise ConfigError("width range must be ordered and fit the image", key="max_width")
        if self.background not in ("flat", "gradient", "noise", "mixed"):
            raise ConfigError(f"unknown background {self.background!r}", key="background")
        if self.glyph not in ("solid", "striped"):
            raise ConfigError(f"unknown glyph {self.glyph!r}", key="glyph")

    @property
    def n_anchors_per_cell(self):
        return len(self.aspect_ratios)

    def lr_at(self, iteration):
        if iteration < self.warmup_iters:
            return self.lr * (iteration + 1) / self.warmup_iters
        return self.lr if iteration < self.lr_decay_iter else self.lr_decayed

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    # -- text form -------------------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _convert(key, raw, source=None, line=None):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.replace(" ", "").split(",") if p)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}", source, line, key) from None


def parse_config(text, source="<config>", base=None):
    """Parse ``key = value`` lines over ``base`` (defaults if omitted)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", source, lineno, key)
        values[key] = _convert(key, value, source, lineno)
    cfg = base if base is not None else TrainConfig()
    try:
        return dataclasses.replace(cfg, **values)
    except ConfigError as e:
        raise ConfigError(str(e), source, None, e.key) from None


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path), base=base)


def apply_overrides(cfg, overrides):
    """Apply ``["key=value", ...]`` (as given to ``--set``) on top of ``cfg``."""
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "--set")
        key, value = (p.strip() for p in item.split("=", 1))
        key = key.split(".")[-1]
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", "--set", key=key)
        values[key] = _convert(key, value, "--set")
    try:
        return dataclasses.replace(cfg, **values)
    except ConfigError as e:
        raise ConfigError(str(e), "--set", key=e.key) from None
