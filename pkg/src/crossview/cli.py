"""Command-line entry point.

    crossview convert cube pixels.csv cube.f32 --height 145 --width 145
    crossview convert gt labels.csv gt.u16 --class-names names.txt
    crossview run-all --config run.json
    crossview describe-split --strategy random --channels 30 --seed 3
    crossview <stage> --config run.json

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .channelsplit import STRATEGIES, make_split
from .config import RunConfig, ConfigError
from .datacube import FormatError, GroundTruth, HyperCube, save_cube, save_ground_truth
from .layers import TrainingDivergedError
from .pipeline import MissingArtifactError, Pipeline, StageError, configure_threads

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

STAGE_COMMANDS = ("pca", "patches", "train-vae", "train-aae", "train-contrast",
                  "extract", "classify", "evaluate")


# ---------------------------------------------------------------------------
# convert


def _read_rows(path, parse):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([parse(cell) for cell in row])
            except ValueError:
                raise FormatError(f"{path}: row {lineno}: unparseable value") from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(
                    f"{path}: row {lineno} has {len(rows[-1])} fields, expected {len(rows[0])}"
                )
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return rows


def convert_cube_csv(src, dst, height, width, note=""):
    """One CSV row per pixel (row-major), one column per band."""
    rows = _read_rows(src, float)
    if len(rows) != height * width:
        raise FormatError(f"{src}: {len(rows)} pixel rows, expected {height}x{width}={height * width}")
    data = np.asarray(rows, dtype=np.float32).reshape(height, width, -1)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{src}: non-finite reflectance values")
    cube = HyperCube(data, wavelength_note=note)
    save_cube(cube, dst)
    return cube


def convert_gt_csv(src, dst, num_classes=None, class_names=None):
    """One CSV row per image row, one integer label per column."""
    rows = _read_rows(src, int)
    labels = np.asarray(rows, dtype=np.int64)
    if labels.min() < 0:
        raise FormatError(f"{src}: negative label")
    if class_names is None:
        k = num_classes if num_classes is not None else int(labels.max())
        class_names = [f"class_{i}" for i in range(1, k + 1)]
    if labels.max() > len(class_names):
        raise FormatError(f"{src}: label {labels.max()} exceeds {len(class_names)} classes")
    gt = GroundTruth(labels, list(class_names))
    save_ground_truth(gt, dst)
    return gt


def _cmd_convert(args):
    if args.kind == "cube":
        if args.height is None or args.width is None:
            raise ConfigError("convert cube needs --height and --width")
        cube = convert_cube_csv(args.input, args.output, args.height, args.width, args.note or "")
        print(f"wrote {args.output}: {cube.height}x{cube.width}x{cube.channels}")
    else:
        names = None
        if args.class_names:
            names = [ln.strip() for ln in Path(args.class_names).read_text().splitlines() if ln.strip()]
        gt = convert_gt_csv(args.input, args.output, args.num_classes, names)
        print(f"wrote {args.output}: {gt.height}x{gt.width}, {gt.num_classes} classes, "
              f"{sum(gt.class_counts)} labeled")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline commands


def _load_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "output", None):
        overrides["output"] = str(Path(args.output).resolve())
    if getattr(args, "feature_source", None):
        overrides["ablation.feature_source"] = args.feature_source
    if getattr(args, "pairing", None):
        overrides["ablation.pairing_mode"] = {"cross": "cross_view", "same": "same_view"}[args.pairing]
    if getattr(args, "self_reconstruction", False):
        overrides["ablation.self_reconstruction"] = True
    if args.config:
        return RunConfig.load(args.config, overrides)
    return RunConfig().with_overrides(overrides)


def _print_metrics(report):
    print(f"OA {report.oa:.2f}  AA {report.aa:.2f}")
    for k, acc in enumerate(report.per_class_acc, start=1):
        print(f"  class {k:2d}: {'n/a' if np.isnan(acc) else f'{acc:.2f}'}")


def _cmd_run_all(args):
    pipe = Pipeline(_load_config(args))
    report = pipe.run_all()
    _print_metrics(report)
    print(f"artifacts in {pipe.out}")
    return EXIT_OK


def _cmd_stage(args):
    pipe = Pipeline(_load_config(args))
    d = pipe.run_stage(args.command, force=args.force)
    if args.command == "evaluate":
        _print_metrics(pipe.metrics())
    print(f"{args.command}: {d}")
    return EXIT_OK


def _cmd_describe_split(args):
    cfg = _load_config(args) if args.config else None
    strategy = args.strategy or (cfg["split"]["strategy"] if cfg else "parity")
    channels = args.channels or (cfg["pca"]["k"] if cfg else 30)
    if args.split_seed is not None:
        seed = args.split_seed
    elif cfg is not None:
        seed = cfg.channel_split_seed()
    else:
        seed = 0
    print(make_split(strategy, channels, seed).describe())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossview", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convert", help="CSV dump -> binary container")
    conv.add_argument("kind", choices=("cube", "gt"))
    conv.add_argument("input")
    conv.add_argument("output")
    conv.add_argument("--height", type=int)
    conv.add_argument("--width", type=int)
    conv.add_argument("--note", help="free-text wavelength note (cube)")
    conv.add_argument("--num-classes", type=int)
    conv.add_argument("--class-names", help="text file, one class name per line")
    conv.set_defaults(func=_cmd_convert)

    def pipeline_flags(p, config_required=True):
        p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--output", help="override the output directory")
        p.add_argument("--feature-source", choices=("vae", "aae", "contrast"))
        p.add_argument("--pairing", choices=("cross", "same"))
        p.add_argument("--self-reconstruction", action="store_true")

    run = sub.add_parser("run-all", help="run every stage, reusing cached artifacts")
    pipeline_flags(run)
    run.set_defaults(func=_cmd_run_all)

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage only")
        pipeline_flags(p)
        p.add_argument("--force", action="store_true", help="recompute even if cached")
        p.set_defaults(func=_cmd_stage)

    ds = sub.add_parser("describe-split", help="print the two channel index lists")
    pipeline_flags(ds, config_required=False)
    ds.add_argument("--strategy", choices=STRATEGIES)
    ds.add_argument("--channels", type=int)
    ds.add_argument("--split-seed", type=int)
    ds.set_defaults(func=_cmd_describe_split)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    configure_threads()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, MissingArtifactError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        if isinstance(exc.cause, TrainingDivergedError):
            print(f"numeric failure in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc.cause, ConfigError):
            print(f"config error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"data error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
