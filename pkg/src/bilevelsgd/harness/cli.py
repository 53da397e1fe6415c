"""Command-line entry point.

Subcommands: train, preset, eval, make-data, report.
Exit codes: 0 success, 1 config/data/usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigurationError, DataError, InternalError, NumericError
from . import checkpoint, presets, synth
from .config import load_config
from .metrics import emit_metrics, read_metrics
from .training import evaluate, run_training


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through our exit codes
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bilevelsgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training config")
    p_train.add_argument("--config", required=True, help="YAML run config")
    p_train.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    p_train.add_argument("--seed", type=int, default=None, help="override config seed")
    p_train.add_argument("--model-out", default=None, help="write final model checkpoint")
    p_train.add_argument("--fig", default=None, help="render training curves to this PNG")

    p_preset = sub.add_parser("preset", help="run a named experiment grid")
    p_preset.add_argument("name", help=f"one of {', '.join(presets.PRESET_NAMES)}")
    p_preset.add_argument("--out-dir", required=True)
    p_preset.add_argument("--data-dir", default=None,
                          help="where the synthetic image data lives (default <out-dir>/data)")
    p_preset.add_argument("--seed", type=int, default=0, help="base seed for the grid")
    p_preset.add_argument("--epochs", type=int, default=None, help="override epochs per cell")
    p_preset.add_argument("--no-figures", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a model checkpoint on a dataset")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", required=True, help="IDX prefix/dir or CSV file")
    p_eval.add_argument("--format", choices=("idx", "csv"), default=None,
                        help="default: csv for *.csv paths, idx otherwise")
    p_eval.add_argument("--class-count", type=int, default=None)

    p_data = sub.add_parser("make-data", help="generate the synthetic desk datasets")
    p_data.add_argument("kind", choices=("images", "moons"))
    p_data.add_argument("--out-dir", required=True)
    p_data.add_argument("--seed", type=int, default=0)
    p_data.add_argument("--train-count", type=int, default=None)
    p_data.add_argument("--test-count", type=int, default=None)

    p_report = sub.add_parser("report", help="re-render figures from metrics CSVs")
    p_report.add_argument("csv", nargs="+", help="metrics CSV files")
    p_report.add_argument("--out-dir", default=".", help="where PNGs are written")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    result = run_training(cfg)
    emit_metrics(result.rows, args.out)
    if result.rows:
        last = result.rows[-1]
        print(
            f"epochs={len(result.rows)} train={last.train_accuracy:.6f} "
            f"test={last.test_accuracy:.6f} gap={last.generalization_gap:.6f}"
        )
    if args.model_out:
        checkpoint.save_model(result.model, args.model_out)
    if args.fig:
        from . import report

        report.save_run_curves(result.rows, Path(args.config).stem, args.fig)
    return 0


def _cmd_preset(args) -> int:
    data_dir = Path(args.data_dir) if args.data_dir else Path(args.out_dir) / "data"
    train_prefix = data_dir / "train"
    if not Path(f"{train_prefix}-images-idx3-ubyte").exists():
        print(f"generating synthetic image data under {data_dir}")
        synth.generate_image_dataset(data_dir)
    preset = presets.expand_preset(
        args.name, str(data_dir / "train"), str(data_dir / "test"),
        base_seed=args.seed, epochs=args.epochs,
    )
    presets.run_preset(preset, args.out_dir, figures=not args.no_figures)
    print(f"wrote {len(preset.cells)} cells to {args.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from ..data import load_dataset

    fmt = args.format or ("csv" if args.data.endswith(".csv") else "idx")
    net = checkpoint.load_model(args.model)
    ds = load_dataset(args.data, fmt, class_count=args.class_count, split="test")
    print(f"accuracy={evaluate(net, ds):.6f}")
    return 0


def _cmd_make_data(args) -> int:
    kwargs = {}
    if args.train_count is not None:
        kwargs["train_count"] = args.train_count
    if args.test_count is not None:
        kwargs["test_count"] = args.test_count
    if args.kind == "images":
        train, test = synth.generate_image_dataset(args.out_dir, seed=args.seed, **kwargs)
    else:
        train, test = synth.generate_moons_csv(args.out_dir, seed=args.seed, **kwargs)
    print(f"train: {train}\ntest: {test}")
    return 0


def _cmd_report(args) -> int:
    from . import report

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for csv_path in args.csv:
        rows = read_metrics(csv_path)
        out = out_dir / (Path(csv_path).stem + ".png")
        report.save_run_curves(rows, Path(csv_path).stem, out)
        print(f"wrote {out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "preset": _cmd_preset,
    "eval": _cmd_eval,
    "make-data": _cmd_make_data,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, DataError, InternalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
