"""Command-line entry point.

    dggan gen-fixtures --count 8 --seed 7 --out data/
    dggan train --config cfg.yaml --phase all
    dggan eval --config cfg.yaml --checkpoint runs/x/joint.npz --split eval
    dggan infer --config cfg.yaml --checkpoint runs/x/joint.npz --image hand.png --out pred/

Hyperparameters live in the config file (``--config`` or ``$DGGAN_CONFIG``).
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DGGANError

log = logging.getLogger("dggan")

PHASE_CHECKPOINTS = {"init_pose": "init_pose.npz", "init_gan": "init_gan.npz", "joint": "joint.npz"}
TRAIN_LOG = "train_log.csv"


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list[Path] = field(default_factory=list)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dggan", description="Depth-regularized 3-D hand pose from RGB.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{gen-fixtures,train,eval,infer}")
    sub.required = True

    g = sub.add_parser("gen-fixtures", help="render a synthetic hand dataset")
    g.add_argument("--count", type=int, required=True, help="training records")
    g.add_argument("--eval-count", type=int, default=0, help="extra records in the 'eval' split")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="run training phases")
    t.add_argument("--config")
    t.add_argument("--phase", choices=["init-pose", "init-gan", "joint", "all"], default="all")
    t.add_argument("--seed", type=int, help="overrides train.seed")
    t.add_argument("--out-dir", help="overrides train.out_dir")

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--config")
    e.add_argument("--checkpoint", help="default: <out_dir>/joint.npz")
    e.add_argument("--split", default="eval")
    e.add_argument("--out", help="report directory (default: <out_dir>/eval_<split>)")
    e.add_argument("--no-figure", action="store_true")

    i = sub.add_parser("infer", help="keypoints and synthesized depth for one RGB image")
    i.add_argument("--config")
    i.add_argument("--checkpoint", help="default: <out_dir>/joint.npz")
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "out_dir", None):
        cfg.train.out_dir = args.out_dir
    return cfg


def _cmd_gen_fixtures(args) -> CommandResult:
    from .dataio import gen_fixtures

    root = gen_fixtures(args.count, args.image_size, args.seed, args.out, eval_count=args.eval_count)
    print(f"wrote {args.count + args.eval_count} records to {root}")
    return CommandResult(0, [root / "manifest.json"])


def _train_data(cfg, load_depth):
    from .dataio import load_dataset

    d = cfg.data
    if d.train_root is None:
        raise ConfigError("data.train_root: required for training", key="data.train_root")
    return load_dataset(d.train_root, d.train_layout, "train", load_depth=load_depth,
                        crop_size=d.crop_size, palm_gamma=d.palm_gamma)


def _pool(cfg):
    from .dataio import load_depth_pool

    d = cfg.data
    return load_depth_pool(d.depth_root or d.train_root, d.depth_layout or d.train_layout, d.depth_split)


def _cmd_train(args) -> CommandResult:
    from . import trainer
    from .plotting import plot_loss_history

    cfg = _config(args)
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / TRAIN_LOG
    phases = ["init_pose", "init_gan", "joint"] if args.phase == "all" else [args.phase.replace("-", "_")]
    artifacts = []

    state = None
    if phases == ["joint"] and not cfg.train.skip_init:
        missing = [PHASE_CHECKPOINTS[p] for p in ("init_pose", "init_gan") if not (out / PHASE_CHECKPOINTS[p]).exists()]
        if missing:
            raise DGGANError(f"missing initialization checkpoint(s) {', '.join(str(out / m) for m in missing)}; "
                             "run 'train --phase init-pose' and 'train --phase init-gan' first "
                             "or set train.skip_init")
        pose_state = trainer.load_checkpoint(out / PHASE_CHECKPOINTS["init_pose"], cfg)
        gan_state = trainer.load_checkpoint(out / PHASE_CHECKPOINTS["init_gan"], cfg)
        state = trainer.merge_states(pose_state, gan_state)
        state.config = cfg

    for phase in phases:
        if phase == "init_pose":
            samples = _train_data(cfg, load_depth=True)
            state = trainer.init_phase_pose(cfg, samples, state, log_path=log_path, ckpt_dir=out)
        elif phase == "init_gan":
            samples = _train_data(cfg, load_depth=False)
            state = trainer.init_phase_gan(cfg, samples, _pool(cfg), state, log_path=log_path, ckpt_dir=out)
        else:
            samples = _train_data(cfg, load_depth=False)
            state = state or trainer.new_state(cfg)
            state = trainer.joint_finetune(cfg, state, samples, _pool(cfg), log_path=log_path, ckpt_dir=out)
        path = trainer.save_checkpoint(state, out / PHASE_CHECKPOINTS[phase])
        artifacts.append(path)
        last = state.history[-1] if state.history else {}
        print(f"{phase}: {state.step} steps -> {path}" + (f" (last total {last.get('total')})" if last else ""))

    if state.history:
        artifacts.append(plot_loss_history(state.history, out / "loss_history.png"))
    if log_path.exists():
        artifacts.append(log_path)
    return CommandResult(0, artifacts)


def _checkpoint_path(args, cfg):
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.train.out_dir) / PHASE_CHECKPOINTS["joint"]


def _cmd_eval(args) -> CommandResult:
    from .dataio import load_dataset
    from .evaluation import PREDICTIONS_FILE, emit_report, write_predictions
    from .inference import evaluate_model
    from .trainer import load_checkpoint

    cfg = _config(args)
    d = cfg.data
    root = d.eval_root or d.train_root
    if root is None:
        raise ConfigError("data.eval_root: required for evaluation", key="data.eval_root")
    state = load_checkpoint(_checkpoint_path(args, cfg), cfg)
    samples = load_dataset(root, d.eval_layout or d.train_layout, args.split, load_depth=False,
                           crop_size=d.crop_size, palm_gamma=d.palm_gamma)
    if not samples:
        raise DGGANError(f"split {args.split!r} of {root} has no records")
    report, preds = evaluate_model(state, samples)
    out = Path(args.out) if args.out else Path(cfg.train.out_dir) / f"eval_{args.split}"
    written = emit_report(report, out, figure=not args.no_figure)
    written.append(write_predictions(((p.record_id, p.kp2d, p.rel_depths) for p in preds), out / PREDICTIONS_FILE))
    print(f"auc_20_50={report.auc_20_50:.4f} epe_mean_mm={report.epe_mean:.2f} "
          f"epe_median_mm={report.epe_median:.2f} n={report.n} excluded={report.excluded} -> {out}")
    return CommandResult(0, written)


def _cmd_infer(args) -> CommandResult:
    import torch
    import torch.nn.functional as F

    from .dataio.io import read_rgb, write_depth16
    from .evaluation import decode_2d
    from .inference import depth_to_uint16
    from .trainer import load_checkpoint

    cfg = _config(args)
    state = load_checkpoint(_checkpoint_path(args, cfg), cfg)
    rgb = read_rgb(args.image)
    h, w = rgb.shape[:2]
    size = cfg.model.input_size
    x = torch.tensor(rgb.transpose(2, 0, 1)[None], dtype=torch.float32)
    if (h, w) != (size, size):
        # pixel-centre aligned resampling, same convention as crop_hand
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    state.pose.eval()
    state.generator.eval()
    with torch.no_grad():
        heatmaps, z, _ = state.pose(x)
        depth = state.generator(x)[0, 0].numpy()
    kp = decode_2d(heatmaps[0, -1].numpy(), size) * np.array([w / size, h / size])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kp_path, depth_path = out / "keypoints.csv", out / "depth.png"
    with open(kp_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["joint", "u", "v", "Z"])
        for j, ((u, v), zj) in enumerate(zip(kp, z[0].numpy())):
            wr.writerow([j, repr(float(u)), repr(float(v)), repr(float(zj))])
    write_depth16(depth_path, depth_to_uint16(depth))
    print(f"wrote {kp_path} and {depth_path}")
    return CommandResult(0, [kp_path, depth_path])


_COMMANDS = {"gen-fixtures": _cmd_gen_fixtures, "train": _cmd_train, "eval": _cmd_eval, "infer": _cmd_infer}


def run(argv=None) -> CommandResult:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CommandResult(int(exc.code or 0))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CommandResult(2)
    except (DGGANError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return CommandResult(1)


def main(argv=None) -> int:
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
