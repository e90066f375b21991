"""Command-line entry point.

Subcommands: train, eval, decompose, synth, inspect. Settings come from
an optional flat dotted-key config file; command-line flags override
file values. Every run prints its fully-resolved configuration. Exit
codes: 0 success, 1 validation error, 2 missing input. The DIFOM_THREADS
environment variable caps evaluation worker threads.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .autodiff import Tensor4
from .config import check_known_keys, coerce, load_config_file
from .data import batch_images, make_synthetic_dataset
from .errors import ConfigError, FreqDistillError
from .losses import LossWeights
from .metrics import MetricReport, evaluate_folder, evaluate_pairs
from .model import ModelConfig, StudentNet
from .pgm import write_pgm
from .spectral import decompose
from .teachers import SynthTeacherSpec, fuse_records, read_records
from .training import TrainConfig, run_training

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MISSING = 2

KNOWN_KEYS: dict[str, str] = {
    "model.input_size": "int",
    "model.channels": "int_list",
    "model.latent_channels": "int",
    "model.d_star": "int",
    "train.total_epochs": "int",
    "train.phase1_end": "int",
    "train.phase2_end": "int",
    "train.lr": "float",
    "train.batch_size": "int",
    "train.seed": "int",
    "train.flip_prob": "float",
    "train.scales": "float_list",
    "spectral.rho": "float",
    "loss.alpha1": "float",
    "loss.alpha2": "float",
    "loss.lambda1": "float",
    "loss.lambda2": "float",
    "loss.lambda3": "float",
    "teacher.synthetic": "bool",
    "teacher.dir": "str",
    "teacher.channels_per_model": "int_list",
    "teacher.sigma": "float",
    "teacher.native_resolution": "int",
    "teacher.target_resolution": "int",
    "teacher.normalize": "bool",
    "data.train_size": "int",
    "data.test_size": "int",
    "data.contrast": "float",
    "out.dir": "str",
}

TRAIN_DEFAULTS: dict[str, object] = {
    "model.input_size": 64,
    "model.channels": (8, 16, 32, 64),
    "model.latent_channels": 32,
    "train.total_epochs": 60,
    "train.phase1_end": 20,
    "train.phase2_end": 40,
    "train.lr": 1e-4,
    "train.batch_size": 4,
    "train.seed": 0,
    "train.flip_prob": 0.5,
    "train.scales": (0.75, 1.0, 1.25),
    "spectral.rho": 0.25,
    "loss.alpha1": 1.0,
    "loss.alpha2": 0.5,
    "loss.lambda1": 0.6,
    "loss.lambda2": 0.1,
    "loss.lambda3": 0.1,
    "teacher.synthetic": True,
    "teacher.channels_per_model": (4, 4, 4, 4),
    "teacher.sigma": 0.1,
    "teacher.native_resolution": 16,
    "teacher.target_resolution": 16,
    "teacher.normalize": True,
    "data.train_size": 32,
    "data.test_size": 8,
    "data.contrast": 0.35,
    "out.dir": "runs/train",
}

# train flags that override config-file keys
_FLAG_TO_KEY = {
    "seed": "train.seed",
    "epochs": "train.total_epochs",
    "phase1_end": "train.phase1_end",
    "phase2_end": "train.phase2_end",
    "lr": "train.lr",
    "batch_size": "train.batch_size",
    "rho": "spectral.rho",
    "teacher_dir": "teacher.dir",
    "train_size": "data.train_size",
    "test_size": "data.test_size",
    "contrast": "data.contrast",
    "out": "out.dir",
}


def worker_count() -> int:
    limit = os.environ.get("DIFOM_THREADS")
    n = os.cpu_count() or 1
    if limit is not None:
        try:
            cap = int(limit)
        except ValueError:
            raise ConfigError(f"DIFOM_THREADS must be an integer, got {limit!r}") from None
        n = max(1, min(n, cap))
    return n


def _print_config(values: dict[str, object]) -> None:
    for key in sorted(values):
        print(f"config: {key} = {values[key]}")


def _resolve_train_settings(args: argparse.Namespace) -> dict[str, object]:
    settings = dict(TRAIN_DEFAULTS)
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        file_values = load_config_file(args.config)
        check_known_keys(file_values, set(KNOWN_KEYS), args.config)
        for key, value in file_values.items():
            settings[key] = coerce(key, value, KNOWN_KEYS[key])
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag)
        if value is not None:
            settings[key] = coerce(key, value, KNOWN_KEYS[key])
    if args.synthetic_teachers:
        settings["teacher.synthetic"] = True
        settings.pop("teacher.dir", None)
    return settings


def cmd_train(args: argparse.Namespace) -> int:
    settings = _resolve_train_settings(args)
    use_files = bool(settings.get("teacher.dir"))
    if use_files:
        settings["teacher.synthetic"] = False

    synth_spec = None
    teacher_dir = None
    if use_files:
        teacher_dir = str(settings["teacher.dir"])
        if not os.path.isdir(teacher_dir):
            raise FileNotFoundError(f"teacher directory not found: {teacher_dir}")
        if "model.d_star" not in settings:
            bundles = sorted(f for f in os.listdir(teacher_dir) if f.endswith(".dfom"))
            if not bundles:
                raise FileNotFoundError(f"no .dfom bundles in {teacher_dir}")
            records = read_records(os.path.join(teacher_dir, bundles[0]))
            settings["model.d_star"] = sum(r.feature_map.shape[2] for r in records)
    else:
        synth_spec = SynthTeacherSpec(
            channels_per_model=tuple(settings["teacher.channels_per_model"]),
            sigma=float(settings["teacher.sigma"]),
            native_resolution=int(settings["teacher.native_resolution"]),
            target_resolution=int(settings["teacher.target_resolution"]),
            normalize=bool(settings["teacher.normalize"]),
        )
        derived = synth_spec.d_star
        declared = settings.get("model.d_star")
        if declared is not None and declared != derived:
            raise ConfigError(
                f"model.d_star={declared} conflicts with synthetic teacher channels ({derived})"
            )
        settings["model.d_star"] = derived

    _print_config(settings)

    model_cfg = ModelConfig(
        input_size=int(settings["model.input_size"]),
        channels=tuple(settings["model.channels"]),
        latent_channels=int(settings["model.latent_channels"]),
        d_star=int(settings["model.d_star"]),
    )
    weights = LossWeights(
        alpha1=float(settings["loss.alpha1"]),
        alpha2=float(settings["loss.alpha2"]),
        lambda1=float(settings["loss.lambda1"]),
        lambda2=float(settings["loss.lambda2"]),
        lambda3=float(settings["loss.lambda3"]),
    )
    out_dir = str(settings["out.dir"])
    os.makedirs(out_dir, exist_ok=True)
    train_cfg = TrainConfig(
        total_epochs=int(settings["train.total_epochs"]),
        phase1_end=int(settings["train.phase1_end"]),
        phase2_end=int(settings["train.phase2_end"]),
        lr=float(settings["train.lr"]),
        batch_size=int(settings["train.batch_size"]),
        flip_prob=float(settings["train.flip_prob"]),
        scales=tuple(settings["train.scales"]),
        seed=int(settings["train.seed"]),
        rho=float(settings["spectral.rho"]),
        weights=weights,
        teacher_dir=teacher_dir,
        synth_teachers=synth_spec,
        teacher_target_resolution=int(settings["teacher.target_resolution"]),
        normalize_teachers=bool(settings["teacher.normalize"]),
        checkpoint_dir=out_dir,
        log_csv=os.path.join(out_dir, "train_log.csv"),
    )

    seed = train_cfg.seed
    size = model_cfg.input_size
    contrast = float(settings["data.contrast"])
    train_set = make_synthetic_dataset(int(settings["data.train_size"]), size, seed, contrast)
    test_set = make_synthetic_dataset(
        int(settings["data.test_size"]), size, seed + 10007, contrast
    )

    model = StudentNet(model_cfg, seed=seed)
    log = run_training(train_cfg, model, train_set)
    print(f"trained {len(log.rows)} steps; log written to {train_cfg.log_csv}")

    pairs = []
    for start in range(0, len(test_set), train_cfg.batch_size):
        chunk = test_set[start : start + train_cfg.batch_size]
        pred, _, _ = model.forward(Tensor4(batch_images(chunk)))
        for sample, pmap in zip(chunk, pred.data[:, 0]):
            pairs.append((pmap.astype(np.float64), sample.mask.astype(np.float64)))
    report, rows = evaluate_pairs(pairs, max_workers=worker_count())
    for name, row in zip((s.id for s in test_set), rows):
        row["image"] = name
    _write_report_csv(os.path.join(out_dir, "report.csv"), report, rows)
    _print_report(report)
    return EXIT_OK


_METRIC_COLS = ["m_dice", "m_iou", "f_beta_w", "s_alpha", "e_phi_max", "mae"]


def _print_report(report: MetricReport) -> None:
    print(
        f"metrics over {report.n_images} images: "
        f"mDice={report.m_dice:.4f} mIoU={report.m_iou:.4f} Fbw={report.f_beta_w:.4f} "
        f"S={report.s_alpha:.4f} Emax={report.e_phi_max:.4f} MAE={report.mae:.4f}"
    )


def _write_report_csv(path: str, report: MetricReport, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image"] + _METRIC_COLS)
        for row in rows:
            writer.writerow([row.get("image", "?")] + [f"{row[c]:.6f}" for c in _METRIC_COLS])
        means = [getattr(report, c) for c in _METRIC_COLS]
        writer.writerow(["MEAN"] + [f"{v:.6f}" for v in means])


def cmd_eval(args: argparse.Namespace) -> int:
    for d in (args.pred, args.gt):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"directory not found: {d}")
    _print_config(
        {"eval.pred": args.pred, "eval.gt": args.gt, "eval.fixed_threshold": args.fixed_threshold,
         "eval.out": args.out}
    )
    report, rows = evaluate_folder(
        args.pred, args.gt, fixed_threshold=args.fixed_threshold, max_workers=worker_count()
    )
    _write_report_csv(args.out, report, rows)
    _print_report(report)
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_decompose(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.bundle):
        raise FileNotFoundError(f"bundle not found: {args.bundle}")
    _print_config(
        {"decompose.bundle": args.bundle, "decompose.rho": args.rho,
         "decompose.resolution": args.resolution, "decompose.channel_limit": args.channel_limit,
         "decompose.out": args.out}
    )
    records = read_records(args.bundle)
    bundle = fuse_records(records, args.resolution)
    parts = decompose(bundle.fused, args.rho)
    os.makedirs(args.out, exist_ok=True)
    n_chan = min(bundle.d_star, args.channel_limit)
    for name, comp in (("lfc", parts.e_lfc), ("hfc", parts.e_hfc)):
        for c in range(n_chan):
            plane = comp[:, :, c]
            span = plane.max() - plane.min()
            norm = (plane - plane.min()) / span if span > 0 else np.zeros_like(plane)
            write_pgm(os.path.join(args.out, f"{name}_c{c:03d}.pgm"), norm)
    print(f"wrote {2 * n_chan} channel images to {args.out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    _print_config(
        {"synth.n": args.n, "synth.size": args.size, "synth.seed": args.seed,
         "synth.contrast": args.contrast, "synth.out": args.out}
    )
    samples = make_synthetic_dataset(args.n, args.size, args.seed, args.contrast)
    os.makedirs(args.out, exist_ok=True)
    for s in samples:
        write_pgm(os.path.join(args.out, f"{s.id}.pgm"), s.image.mean(axis=0))
        write_pgm(os.path.join(args.out, f"{s.id}_mask.pgm"), s.mask)
    print(f"wrote {len(samples)} image/mask pairs to {args.out}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.bundle):
        raise FileNotFoundError(f"bundle not found: {args.bundle}")
    _print_config({"inspect.bundle": args.bundle})
    records = read_records(args.bundle)
    print(f"{'record':<8}{'model_id':<20}dims")
    d_star = 0
    for i, rec in enumerate(records):
        h, w, c = rec.feature_map.shape
        print(f"{i:<8}{rec.model_id:<20}{h}x{w}x{c}")
        d_star += c
    print(f"d_star = {d_star}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqdistill",
        description="Frequency-aware feature distillation for lightweight polyp segmentation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p_train = sub.add_parser("train", help="run the three-phase training loop")
    p_train.add_argument("--config", help="flat dotted-key config file")
    p_train.add_argument("--seed", type=int, help="master RNG seed (train.seed)")
    p_train.add_argument("--epochs", type=int, help="total epochs (train.total_epochs)")
    p_train.add_argument("--phase1-end", type=int, dest="phase1_end",
                         help="first epoch of phase II (train.phase1_end)")
    p_train.add_argument("--phase2-end", type=int, dest="phase2_end",
                         help="first epoch of phase III (train.phase2_end)")
    p_train.add_argument("--lr", type=float, help="Adam learning rate (train.lr)")
    p_train.add_argument("--batch-size", type=int, dest="batch_size",
                         help="samples per step (train.batch_size)")
    p_train.add_argument("--rho", type=float, help="radial cutoff fraction (spectral.rho)")
    p_train.add_argument("--teacher-dir", dest="teacher_dir",
                         help="directory of per-sample .dfom bundles (teacher.dir)")
    p_train.add_argument("--synthetic-teachers", action="store_true", dest="synthetic_teachers",
                         help="force synthetic teachers even if the config names a dir")
    p_train.add_argument("--train-size", type=int, dest="train_size",
                         help="synthetic training samples (data.train_size)")
    p_train.add_argument("--test-size", type=int, dest="test_size",
                         help="synthetic held-out samples (data.test_size)")
    p_train.add_argument("--contrast", type=float, help="polyp contrast (data.contrast)")
    p_train.add_argument("--out", help="output directory (out.dir)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="compute the six-metric report over folders")
    p_eval.add_argument("--pred", required=True, help="directory of prediction .pgm maps")
    p_eval.add_argument("--gt", required=True, help="directory of ground-truth .pgm masks")
    p_eval.add_argument("--fixed-threshold", action="store_true", dest="fixed_threshold",
                        help="binarize at 0.5 instead of the 256-threshold sweep")
    p_eval.add_argument("--out", default="report.csv", help="report CSV path")
    p_eval.set_defaults(func=cmd_eval)

    p_dec = sub.add_parser("decompose", help="dump LFC/HFC channels of a bundle as PGM images")
    p_dec.add_argument("--bundle", required=True, help="input .dfom bundle")
    p_dec.add_argument("--rho", type=float, default=0.25, help="radial cutoff fraction")
    p_dec.add_argument("--resolution", type=int, default=32, help="fusion resolution")
    p_dec.add_argument("--channel-limit", type=int, default=8, dest="channel_limit",
                       help="max channels to dump per component")
    p_dec.add_argument("--out", required=True, help="output directory")
    p_dec.set_defaults(func=cmd_decompose)

    p_synth = sub.add_parser("synth", help="generate synthetic image/mask pairs")
    p_synth.add_argument("--n", type=int, required=True, help="number of samples")
    p_synth.add_argument("--size", type=int, default=64, help="image side length")
    p_synth.add_argument("--seed", type=int, default=0, help="generator seed")
    p_synth.add_argument("--contrast", type=float, default=0.35, help="polyp contrast")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_ins = sub.add_parser("inspect", help="print the record table of a bundle")
    p_ins.add_argument("--bundle", required=True, help="input .dfom bundle")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_help()
        return EXIT_INVALID
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FreqDistillError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
