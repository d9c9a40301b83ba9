from .config import ConfigError, TrainConfig, apply_overrides, load_config, parse_config
from .infer import infer
from .loss import LossBreakdown, compute_loss
from .model import Detector, ScaleMap, init_params
from .train import Trainer, objective, train

__all__ = [
    "ConfigError", "TrainConfig", "apply_overrides", "load_config", "parse_config",
    "infer", "LossBreakdown", "compute_loss", "Detector", "ScaleMap", "init_params",
    "Trainer", "objective", "train",
]
