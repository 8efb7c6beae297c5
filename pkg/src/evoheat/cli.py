"""Command line surface: one subcommand per experiment kind.

Exit status: 0 when every check passes, 1 on any failed check, 2 when
the only non-passing verdicts are vacuous bounds, 3 on configuration
errors. Reports, data tables, and figures land in the output directory.
"""

from __future__ import annotations

import argparse
import sys

from .config import (
    ConfigError,
    EXPERIMENT_KINDS,
    apply_overrides,
    config_digest,
    read_config,
)
from .emit import emit_report, render_summary
from .experiments import run_experiment
from .figures import render_figures
from .reports import exit_status

CONFIG_ERROR_STATUS = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoheat",
        description="Verification experiments for kernels of "
                    "backward-time parabolic flows on evolving lattices.")
    sub = parser.add_subparsers(dest="kind", required=True,
                                metavar="experiment")
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True,
                       help="path to the experiment configuration")
        p.add_argument("--out", default="evoheat-out",
                       help="output directory (default: evoheat-out)")
        p.add_argument("--grid", type=int, default=None,
                       help="override mesh.nodes")
        p.add_argument("--dt", default=None,
                       help="override experiment.dt")
        p.add_argument("--tol", action="append", default=[],
                       metavar="NAME=VALUE",
                       help="override a check tolerance (repeatable)")
        p.add_argument("--k-max", type=int, default=None,
                       help="override sequence.k_max")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    return parser


def _parse_tols(pairs, parser) -> dict:
    out = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name or not value:
            parser.error(f"--tol expects NAME=VALUE, got {pair!r}")
        out[name] = value
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    tols = _parse_tols(args.tol, parser)
    try:
        cfg = read_config(args.config)
        cfg = apply_overrides(cfg, grid=args.grid, dt=args.dt, tols=tols,
                              k_max=args.k_max)
        result = run_experiment(args.kind, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR_STATUS
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR_STATUS
    digest = config_digest(cfg)
    emit_report(result.reports, "text-records", args.out, digest)
    emit_report(result.reports, "csv-tables", args.out, digest,
                tables=result.tables)
    if not args.no_figures:
        render_figures(result.tables, args.out, digest)
    sys.stdout.write(render_summary(result.reports, digest))
    return exit_status(result.reports)


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
