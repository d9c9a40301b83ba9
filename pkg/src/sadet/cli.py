"""``sadet`` command line.

Exit codes: 0 ok, 1 gradient check failed, 2 usage error, 3 config error,
4 I/O or file-format error, 5 training aborted on non-finite values.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evalmetrics, gradcheck
from .network import checkpoint as ckpt_io
from .network.config import ConfigError, TrainConfig, apply_overrides, load_config
from .network.infer import infer
from .network.model import Detector
from .network.train import Trainer, TrainingDiverged, heldout_scenes, training_scenes, write_curve
from .ppm import PPMError, draw_boxes, from_pixels, read_ppm, to_pixels, write_ppm
from .synthdata import format_boxes, read_dataset, write_dataset
from .tensor import TensorFormatError

EXIT_OK, EXIT_GRADCHECK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NAN = 0, 1, 2, 3, 4, 5


def _common(top):
    # global flags are accepted before or after the subcommand; the copy on
    # the subcommands must not reset values given before it
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=d(None), help="key = value config file")
    p.add_argument("--out", metavar="DIR", default=d("out"), help="output directory (default: out)")
    p.add_argument("--set", metavar="K=V", action="append", default=d([]), dest="overrides",
                   help="config override, repeatable; applied after --config")
    p.add_argument("--seed", type=int, default=d(None), help="shorthand for --set seed=N")
    p.add_argument("-q", "--quiet", action="store_true", default=d(False),
                   help="only warnings and errors")
    return p


def build_parser():
    common = _common(False)
    parser = argparse.ArgumentParser(prog="sadet", parents=[_common(True)],
                                     description="Scale-adaptive single-shot box detector.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    sub.add_parser("synth", parents=[common], help="write train/ and test/ synthetic datasets")

    p = sub.add_parser("train", parents=[common], help="train and write checkpoints + loss.csv")
    p.add_argument("--data", metavar="DIR", help="dataset written by synth (default: generate)")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")

    p = sub.add_parser("infer", parents=[common], help="detect boxes, write .txt and boxed .ppm")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("images", nargs="+", metavar="IMAGE", help="P6 PPM images")

    p = sub.add_parser("eval", parents=[common], help="precision/recall/F on held-out scenes")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("--data", metavar="DIR", help="dataset directory (default: generated held-out)")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default: 0.5)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all backward passes")
    p.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)
    p.add_argument("--step", type=float, default=1e-5)

    p = sub.add_parser("bench", parents=[common], help="time the head operator, write bench.csv")
    p.add_argument("--sizes", default="32x16x16,32x32x32,32x64x64",
                   help="comma-separated CxHxW list")
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--scale", type=float, default=1.7, help="uniform scale map value")

    p = sub.add_parser("scalemap", parents=[common], help="write scale-map heatmaps")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("images", nargs="+", metavar="IMAGE")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _load_model(path, args):
    ckpt = ckpt_io.load(path)
    cfg = apply_overrides(ckpt.config, args.overrides)
    return Detector(cfg, ckpt.params)


def _read_image(path, dtype):
    return from_pixels(read_ppm(path), dtype)


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args, cfg, out):
    for name, scenes in (("train", training_scenes(cfg)), ("test", heldout_scenes(cfg))):
        write_dataset(scenes, out / name)
        print(f"{name}: {len(scenes)} scenes -> {out / name}")
    (out / "config.txt").write_text(cfg.to_text())
    return EXIT_OK


def cmd_train(args, cfg, out):
    if args.data:
        dataset = read_dataset(Path(args.data) / "train")
        if not dataset:
            raise FileNotFoundError(f"{args.data}/train/manifest.txt: no training scenes")
    else:
        dataset = training_scenes(cfg)
    if args.resume:
        ckpt = ckpt_io.load(args.resume)
        trainer = Trainer.resume(ckpt, dataset)
        trainer.cfg = cfg = apply_overrides(ckpt.config, args.overrides)
        trainer.model.cfg = cfg
    else:
        trainer = Trainer.fresh(cfg, dataset)
    (out / "config.txt").write_text(cfg.to_text())
    try:
        ckpt = trainer.run(out_dir=out)
    finally:
        write_curve(out / "loss.csv", trainer.curve)
    ckpt_io.save(out / "checkpoint.sadc", ckpt)
    last = trainer.curve[-1][1] if trainer.curve else float("nan")
    print(f"trained to iteration {ckpt.iteration}, last loss {last:.4f} -> {out / 'checkpoint.sadc'}")
    return EXIT_OK


def cmd_infer(args, cfg, out):
    model = _load_model(args.checkpoint, args)
    c = model.cfg
    for path in map(Path, args.images):
        image = _read_image(path, model.dtype)
        boxes, scores = infer(image, model, c.resolutions, c.conf_thresh, c.nms_thresh)
        (out / f"{path.stem}.txt").write_text(format_boxes(boxes, scores))
        write_ppm(out / f"{path.stem}.ppm", draw_boxes(to_pixels(image), boxes))
        print(f"{path}: {len(boxes)} boxes")
    return EXIT_OK


def cmd_eval(args, cfg, out):
    model = _load_model(args.checkpoint, args)
    c = model.cfg
    if args.data:
        scenes = read_dataset(Path(args.data) / "test", model.dtype)
        if not scenes:
            raise FileNotFoundError(f"{args.data}/test/manifest.txt: no test scenes")
    else:
        scenes = heldout_scenes(c)
    dets = [infer(sc.image, model, c.resolutions, c.conf_thresh, c.nms_thresh) for sc in scenes]
    report = evalmetrics.evaluate(dets, [sc.gts for sc in scenes], args.iou)
    corr = evalmetrics.scale_correlation(model, scenes)
    (out / "eval.csv").write_text(report.to_csv())
    text = report.summary() + "\nscale vs size: " + corr.summary() + "\n"
    (out / "eval.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg, out):
    results = gradcheck.run_all(cfg.seed, cfg.precision, args.step)
    worst = max(results.values())
    lines = [f"{name:24s} {err:.3e}" for name, err in results.items()]
    lines.append(f"{'worst':24s} {worst:.3e} (tolerance {args.tolerance:g})")
    text = "\n".join(lines) + "\n"
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if worst <= args.tolerance else EXIT_GRADCHECK


def _parse_sizes(text):
    sizes = []
    for item in text.split(","):
        try:
            c, h, w = (int(v) for v in item.lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad size {item!r}, expected CxHxW", "--sizes", key="sizes") from None
        sizes.append((c, h, w))
    return sizes


def cmd_bench(args, cfg, out):
    rows, budget = evalmetrics.bench(sizes=_parse_sizes(args.sizes), repetitions=args.repetitions,
                                     warmup=args.warmup, n_c=cfg.n_anchors_per_cell,
                                     seed=cfg.seed, scale=args.scale)
    text = evalmetrics.bench_csv(rows, budget)
    (out / "bench.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_scalemap(args, cfg, out):
    model = _load_model(args.checkpoint, args)
    for path in map(Path, args.images):
        image = _read_image(path, model.dtype)
        smap = model.forward(image[None]).scale.value[0]
        lo, hi = evalmetrics.write_heatmap(out / f"{path.stem}_scale.ppm", smap)
        print(f"{path}: scale range [{lo:.4f}, {hi:.4f}] -> {out / (path.stem + '_scale.ppm')}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench, "scalemap": cmd_scalemap}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as e:
        print(f"sadet: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"sadet: {e}", file=sys.stderr)
        return EXIT_NAN
    except (OSError, PPMError, TensorFormatError, ckpt_io.CheckpointError, ValueError) as e:
        print(f"sadet: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
