"""Command line interface: ``mixlag run`` and ``mixlag check``."""

import argparse
import logging
import sys

from . import driver
from .errors import ConfigError, MixlagError, SolverError, UsageError


def _add_key_flags(p):
    """One ``--section.key VALUE`` flag per config key, folded into the overrides."""
    for sec, keys in driver.DEFAULTS.items():
        for k in keys:
            p.add_argument(f"--{sec}.{k}", dest=f"key__{sec}__{k}", metavar="VALUE",
                           help=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(prog="mixlag",
                                     description="Lagrangian diffusion and mixing-geometry experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run experiments and write CSV / summary files"),
                           ("check", "run experiments and report checks only")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--jobs", type=int, default=1, help="parallel experiment workers")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. scenario.n=128 (repeatable)")
        _add_key_flags(p)
    return parser


def _overrides(args):
    out = list(args.override)
    for name, value in vars(args).items():
        if name.startswith("key__") and value is not None:
            _, sec, k = name.split("__", 2)
            out.append(f"{sec}.{k}={value}")
    if getattr(args, "out", None):
        out.append(f"output.dir={args.out}")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = driver.read_config(args.config, _overrides(args))
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return driver.EXIT_CONFIG
    try:
        report = driver.run(cfg, jobs=args.jobs)
    except SolverError as exc:
        print(f"solver error: {exc} (residual {exc.residual})", file=sys.stderr)
        return driver.EXIT_SOLVER
    except UsageError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return driver.EXIT_CONFIG
    except MixlagError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return driver.EXIT_SOLVER
    if args.command == "run":
        out = report.write()
        print(f"wrote {out}")
    for c in report.checks:
        print(c.line())
    failed = [c for c in report.checks if not c.passed]
    if failed:
        print(f"{len(failed)} check(s) failed:", file=sys.stderr)
        for c in failed:
            print(f"  {c.name}", file=sys.stderr)
        return driver.EXIT_CHECK
    return driver.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
