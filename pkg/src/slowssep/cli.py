"""Command line entry point: ``slowssep <subcommand> [--config FILE] [--set k=v] --out DIR``.

Subcommands map to experiment modes (``simulate`` runs trajectories, ``sweep``
runs whatever mode the config file names). Exit status is 0 when every check
passes, 1 when a check fails or the run is incomplete, and 2 on an invalid
configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, harness

SUBCOMMANDS = {
    "simulate": "trajectory",
    "stationary": "stationary",
    "exact": "exact",
    "pde": "pde",
    "ode": "ode",
    "verify": "verify",
    "sweep": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowssep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, mode in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a {mode or 'configured'} experiment")
        if name == "verify":
            p.add_argument("level", nargs="?", choices=harness.LEVELS,
                           help="fast: enumeration/PDE/ODE checks; full: adds Monte Carlo")
        p.add_argument("--config", type=Path, help="TOML experiment file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field, e.g. grid.N=[8,16]")
        p.add_argument("--out", type=Path, help="output directory (default: <output>/<name>)")
        p.add_argument("--workers", type=int, help="worker threads for replicas")
        p.add_argument("--quiet", action="store_true")
    return parser


def _resolve(args) -> harness.ExperimentSpec:
    mode = SUBCOMMANDS[args.command]
    defaults = {"name": args.command}
    if mode is not None:
        defaults["mode"] = mode
    elif args.config is None:
        raise harness.SpecError("--config", "sweep needs a config file")
    data = dict(defaults)
    if args.config is not None:
        data.update(harness.parse_toml(args.config.read_text(encoding="utf-8")))
    if mode is not None:
        data["mode"] = mode
    if getattr(args, "level", None):
        data["level"] = args.level
    return harness.spec_from_mapping(harness.apply_overrides(data, args.overrides))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _resolve(args)
    except (harness.SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(spec.output) / spec.name

    def progress(res):
        if not args.quiet:
            print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}: {res.description}",
                  flush=True)

    report = harness.run_experiment(spec, out, args.workers, progress)
    if not args.quiet:
        if spec.mode != "verify":
            for chk in report.checks:
                print(f"[{'PASS' if chk['passed'] else 'FAIL'}] {chk['name']}: "
                      f"{chk['description']}")
        print(f"{'passed' if report.passed else 'FAILED'}; artifacts in {out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
