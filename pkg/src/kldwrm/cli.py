"""Command-line entry point: ``kldwrm {run,summarize,plot,verify}``."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .data import DATA_DIR_ENV
from .errors import KldwrmError
from .trainer import RunConfig, run


def _add_config_flags(p: argparse.ArgumentParser):
    for f in dataclasses.fields(RunConfig):
        # values stay strings here and are coerced by RunConfig
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="VALUE",
                       help=f"(default: {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kldwrm", description="Wake-regularized natural-gradient training lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one seeded run and write a metrics CSV")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--echo", action="store_true", help="print the resolved config and exit")
    _add_config_flags(p)

    p = sub.add_parser("summarize", help="mean/sd and threshold counts over run CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--label", default="")

    p = sub.add_parser("plot", help="render learning curves of run CSVs to SVG")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("verify", help="run the randomized oracle equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig) if getattr(args, f.name) is not None}
    if "data_dir" not in overrides and os.environ.get(DATA_DIR_ENV):
        overrides["data_dir"] = os.environ[DATA_DIR_ENV]
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_mapping(overrides)


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    if args.echo:
        sys.stdout.write(cfg.to_text())
        return 0
    metrics = run(cfg)
    last = metrics.rows[-1]
    print(f"wrote {cfg.output}: epoch {last['epoch']} test_loss={last['test_loss']:.4f} test_acc={last['test_acc']:.4f}")
    if metrics.diverged:
        print(metrics.diverged, file=sys.stderr)
        return 3
    return 0


def cmd_summarize(args) -> int:
    from .report import load_runs, summarize

    sys.stdout.write(summarize(load_runs(args.csv)).to_text(args.label))
    return 0


def cmd_plot(args) -> int:
    from .report import load_runs, render_curves

    labels = [os.path.splitext(os.path.basename(p))[0] for p in args.csv]
    render_curves(load_runs(args.csv), args.output, labels)
    print(f"wrote {args.output}")
    return 0


def cmd_verify(args) -> int:
    from .verify import CHECKS

    failed = False
    for name, check in CHECKS.items():
        err = check(seed=args.seed)
        ok = err <= args.tol
        failed |= not ok
        print(f"{name:20s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


COMMANDS = {"run": cmd_run, "summarize": cmd_summarize, "plot": cmd_plot, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (KldwrmError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
