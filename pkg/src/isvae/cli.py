"""Command-line entry points: run, plotdata, gen-synthetic, score."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from isvae.datagen import SyntheticSpec, generate_synthetic, write_csv
from isvae.experiment import ConfigError, ExperimentConfig, emit_plot_data, run_experiment, score_files
from isvae.spectral import ValidationError


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    overrides = {
        "output_dir": args.output_dir,
        "n_realizations": args.realizations,
        "n_baseline_realizations": args.baseline_realizations,
        "base_seed": args.seed,
        "n_workers": args.workers,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.epochs is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    table = run_experiment(cfg)
    print(f"wrote {len(table)} rows to {Path(cfg.output_dir) / 'results.csv'}")
    return 0


def _cmd_plotdata(args) -> int:
    for path in emit_plot_data(args.run_dir, realization=args.realization, variant=args.variant):
        print(path)
    return 0


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec.from_json(Path(args.spec).read_text())
    write_csv(generate_synthetic(spec), args.out)
    return 0


def _cmd_score(args) -> int:
    print(json.dumps(score_files(args.features, args.labels), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isvae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--realizations", type=int)
    p.add_argument("--baseline-realizations", type=int)
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plotdata", help="write f0_scatter.csv and filter_evolution.csv")
    p.add_argument("run_dir")
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--variant", help="e.g. isvae-vanilla_J2")
    p.set_defaults(func=_cmd_plotdata)

    p = sub.add_parser("gen-synthetic", help="generate the synthetic sinusoid dataset")
    p.add_argument("spec")
    p.add_argument("out")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("score", help="score an assignment against features")
    p.add_argument("features")
    p.add_argument("labels")
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
