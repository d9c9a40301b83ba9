"""Training loop, deterministic given the config seed."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..synthdata import SceneSpec, generate_scenes
from ..tensor import NonFiniteError, check_finite
from . import checkpoint as ckpt_io
from .loss import compute_loss
from .model import Detector, init_params
from .optim import clip_by_global_norm, init_buffers, sgd_step

log = logging.getLogger(__name__)

CURVE_HEADER = ("iteration", "total", "conf", "loc", "n_matched")


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, batch, detail, dump_path=None):
        msg = f"non-finite values at iteration {iteration} (batch {list(batch)}): {detail}"
        if dump_path:
            msg += f"; batch dumped to {dump_path}"
        super().__init__(msg)
        self.iteration = iteration
        self.batch = batch
        self.dump_path = dump_path


def objective(model, images, gts_list, matches=None, raw_scale=None, patterns=None):
    """Forward, loss and backward for one batch.

    ``matches`` and ``patterns`` pin the anchor assignment and the backbone's
    activation pattern, which makes the loss smooth for gradient checks.
    Returns ``(breakdown, grads, fwd, g_raw, matches)``.
    """
    fwd = model.forward(images, raw_scale=raw_scale, patterns=patterns)
    H, W = fwd.head.conf.shape[1:3]
    breakdown, lg, matches = compute_loss(fwd.head, fwd.scale.value, model.anchors(H, W),
                                          gts_list, model.cfg, matches=matches)
    grads, g_raw = model.backward(fwd, lg.conf, lg.loc, lg.scale)
    return breakdown, grads, fwd, g_raw, matches


def training_scenes(cfg):
    return generate_scenes(SceneSpec.from_config(cfg), 0, cfg.n_train)


def heldout_scenes(cfg, count=None):
    """Scenes from the index range after the training split."""
    return generate_scenes(SceneSpec.from_config(cfg), cfg.n_train,
                           cfg.n_test if count is None else count)


@dataclass
class Trainer:
    cfg: object
    dataset: list
    model: Detector
    buffers: dict
    rng: np.random.Generator
    iteration: int = 0
    curve: list = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg, dataset):
        if not dataset:
            raise ValueError("training needs a non-empty dataset")
        init_rng = np.random.default_rng([cfg.seed, 0])
        params = init_params(cfg, init_rng)
        return cls(cfg, dataset, Detector(cfg, params), init_buffers(params),
                   np.random.default_rng([cfg.seed, 1]))

    @classmethod
    def resume(cls, ckpt, dataset):
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
        return cls(ckpt.config, dataset, Detector(ckpt.config, ckpt.params), ckpt.buffers,
                   rng, ckpt.iteration)

    def checkpoint(self):
        return ckpt_io.Checkpoint(self.cfg, {k: v.copy() for k, v in self.model.params.items()},
                                  {k: v.copy() for k, v in self.buffers.items()},
                                  self.iteration, self.rng.bit_generator.state)

    def next_batch(self):
        cfg = self.cfg
        idx = self.rng.integers(0, len(self.dataset), size=cfg.batch_size)
        flips = self.rng.random(cfg.batch_size) < 0.5 if cfg.flip else np.zeros(cfg.batch_size, bool)
        images, gts = [], []
        for i, flip in zip(idx, flips):
            scene = self.dataset[i]
            img, boxes = scene.image, np.array(scene.gts, dtype=np.float64)
            if flip:
                img = img[:, :, ::-1]
                boxes[:, 0] = img.shape[2] - boxes[:, 0]
            images.append(img)
            gts.append(boxes)
        return np.stack(images).astype(self.model.dtype), gts, idx

    def step(self, dump_dir=None):
        cfg = self.cfg
        images, gts, idx = self.next_batch()
        breakdown, grads, _, _, _ = objective(self.model, images, gts)
        try:
            if not math.isfinite(breakdown.total):
                raise NonFiniteError("loss", 1)
            for name, g in grads.items():
                check_finite(f"grad[{name}]", g)
        except NonFiniteError as e:
            path = None
            if dump_dir is not None:
                path = Path(dump_dir) / f"nan_batch_{self.iteration}.npz"
                np.savez(path, images=images, batch=idx,
                         **{f"gt{k}": g for k, g in enumerate(gts)})
            raise TrainingDiverged(self.iteration, idx, str(e), path) from None
        clip_by_global_norm(grads, cfg.grad_clip)
        # the scale layer can be held at its init (s = 1) while the head settles
        scale_mult = 0.0 if self.iteration < cfg.scale_freeze_iters else cfg.scale_lr_mult
        sgd_step(self.model.params, grads, self.buffers, cfg.lr_at(self.iteration),
                 cfg.momentum, cfg.weight_decay, {"scale.": scale_mult})
        if scale_mult == 0.0:
            for name in self.buffers:
                if name.startswith("scale."):
                    self.buffers[name][...] = 0
        row = (self.iteration, breakdown.total, breakdown.conf_term, breakdown.loc_term,
               breakdown.n_matched)
        self.curve.append(row)
        self.iteration += 1
        return breakdown

    def run(self, until=None, out_dir=None):
        cfg = self.cfg
        until = cfg.iterations if until is None else until
        while self.iteration < until:
            b = self.step(dump_dir=out_dir)
            it = self.iteration
            if cfg.log_every and it % cfg.log_every == 0:
                recent = [r[1] for r in self.curve[-cfg.log_every:]]
                log.info("iter %d loss %.4f (conf %.3f loc %.3f N %d)", it, float(np.mean(recent)),
                         b.conf_term, b.loc_term, b.n_matched)
            if out_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                ckpt_io.save(Path(out_dir) / f"checkpoint_{it:06d}.sadc", self.checkpoint())
        return self.checkpoint()


def write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for it, total, conf, loc, n in rows:
            w.writerow([it, repr(float(total)), repr(float(conf)), repr(float(loc)), n])


def train(dataset, cfg, out_dir=None):
    """Train from scratch; returns ``(checkpoint, loss_curve_rows)``."""
    trainer = Trainer.fresh(cfg, dataset)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    ckpt = trainer.run(out_dir=out_dir)
    if out_dir is not None:
        ckpt_io.save(Path(out_dir) / "checkpoint.sadc", ckpt)
        write_curve(Path(out_dir) / "loss.csv", trainer.curve)
    return ckpt, trainer.curve
