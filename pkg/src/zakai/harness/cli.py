"""Command-line entry point: one subcommand per experiment kind.

Exit codes: 0 all checks pass, 1 some check fails, 2 invalid config,
3 hypothesis failure in strict mode or too many failed paths.
"""

from __future__ import annotations

import argparse
import sys

from .config import KINDS, ConfigError, RunConfig, defaults_for, load_config
from .plots import emit_plots
from .runner import HypothesisFailure, RunAborted, resolve_out, run

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zakai", description="Pathwise solvers and verification experiments.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run the {kind} experiment")
        s.add_argument("--config", metavar="PATH", help="YAML config (its kind must match)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--paths", type=int, help="number of paths (overrides the config)")
        g = s.add_mutually_exclusive_group()
        g.add_argument("--strict", dest="strict", action="store_true", default=None, help="fail on hypothesis violations")
        g.add_argument("--permissive", dest="strict", action="store_false", help="record hypothesis violations and go on")
        s.add_argument("--no-plots", action="store_true", help="skip the SVG and .dat outputs")
    return p


def _config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.kind != args.kind:
            raise ConfigError([f"kind: config is for {cfg.kind}, subcommand is {args.kind}"])
        data = cfg.to_dict()
    else:
        data = defaults_for(args.kind)
    for key in ("seed", "out", "paths", "strict"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    try:
        report = run(cfg, args.out)
    except (HypothesisFailure, RunAborted) as exc:
        if isinstance(exc, HypothesisFailure) and exc.report is not None:
            for line in exc.report.lines():
                print(line)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out_dir = resolve_out(cfg, args.out)
    for line in report.lines():
        print(line)
    if not args.no_plots:
        emit_plots(report, out_dir)
    print(f"report hash {report.content_hash()}  ({report.wall_clock:.1f} s)")
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
