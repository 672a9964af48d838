"""Command-line entry point: ``spotafl {run,compare-solvers,validate-bound,xi-table}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from spotafl import experiment
from spotafl.config import ConfigParseError, ExperimentConfig, load_config
from spotafl.fedlearn import AGGREGATORS
from spotafl.privsec import xi
from spotafl.scheduler import SCHEDULER_CHOICES


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", help="output directory (overrides [experiment] output_dir)")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="master seed")
    p.add_argument("--scheduler", choices=SCHEDULER_CHOICES)
    p.add_argument("--aggregator", choices=AGGREGATORS)
    p.add_argument("--replicates", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spotafl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "train all replicates and write traces, summary and bound report"),
        ("compare-solvers", "time and score the scheduling solvers on sampled instances"),
        ("validate-bound", "check the convergence bound against replicate-mean gaps"),
    ):
        _add_common(sub.add_parser(name, help=help_text))
    xp = sub.add_parser("xi-table", help="print the normalized MMSE function on a grid")
    xp.add_argument("--t-max", type=float, default=10.0)
    xp.add_argument("--step", type=float, default=0.5)
    xp.add_argument("--out", help="write the table here instead of stdout")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(master_seed=args.seed, scheduler=args.scheduler, aggregator=args.aggregator,
                              replicates=args.replicates, output_dir=args.out)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    written = experiment.run_experiment(cfg)
    print(f"wrote {len(written)} files to {cfg.output_dir}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load(args)
    text = experiment.compare_solvers_csv(experiment.compare_solvers(cfg))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare_solvers.csv").write_text(text)
    print(f"wrote {out / 'compare_solvers.csv'}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    cfg = replace(cfg, learning=replace(cfg.learning, loss="linreg", lr_mode="theorem"))
    prepared, traces = experiment.run_replicates(cfg)
    report = experiment.bound_report(cfg, prepared, traces)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bound_report.csv").write_text(report.to_csv())
    worst = int(np.argmin(report.margin))
    print(f"bound holds: {report.holds} (replicates={report.replicates}, "
          f"var_bound={report.var_bound:.6g}, tightest round {worst}, margin {report.margin[worst]:.6g})")
    for note in report.notes:
        print(f"note: {note}")
    return 0 if report.holds else 1


def _cmd_xi(args: argparse.Namespace) -> int:
    if args.step <= 0 or args.t_max < 0:
        print("error: need --step > 0 and --t-max >= 0", file=sys.stderr)
        return 2
    grid = np.arange(0.0, args.t_max + 0.5 * args.step, args.step)
    lines = ["t,xi"] + [f"{t!r},{xi(t)!r}" for t in map(float, grid)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "compare-solvers": _cmd_compare,
    "validate-bound": _cmd_validate,
    "xi-table": _cmd_xi,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
