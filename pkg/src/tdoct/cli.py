"""``tdoct`` command line: run, sweep, validate, reference."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, SWEEP_AXES, ConfigError, load_config
from .control import MemoryLimitError

EXIT_CONFIG = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tdoct",
        description="Optimal control of time-dependent targets.",
        epilog="CONFIG is an INI file or one of the presets: " + ", ".join(sorted(PRESETS)))
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="log progress (-vv for every iteration)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, iterations=True):
        sp.add_argument("config", help="config file or preset name")
        sp.add_argument("--out", help="output directory (default: [output] directory)")
        sp.add_argument("--stride", type=int, help="output sampling stride in time steps")
        if iterations:
            sp.add_argument("--max-iter", type=int, help="override max_iterations")

    common(sub.add_parser("run", help="optimize one configuration"))
    sw = sub.add_parser("sweep", help="optimize over a list of parameter values")
    common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True,
                    help="comma separated values, e.g. 0.05,0.2,0.5")
    sw.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    va = sub.add_parser("validate", help="check a configuration without optimizing")
    va.add_argument("config", help="config file or preset name")
    va.add_argument("--deep", action="store_true", help="also run the oracle suite")
    re = sub.add_parser("reference", help="write the reference trajectory r(t)")
    re.add_argument("config", help="config file or preset name")
    re.add_argument("--out", help="output file (default: [reference] output)")
    sub.add_parser("presets", help="list presets")
    show = sub.add_parser("show", help="print a preset or config as complete INI text")
    show.add_argument("config")
    return p


def _values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r}") from None
    if not vals:
        raise ConfigError("no sweep values given")
    return vals


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose < 2:
        logging.getLogger("tdoct.control").setLevel(max(level, logging.WARNING))
    from . import experiments as ex

    try:
        if args.command == "presets":
            for name in sorted(PRESETS):
                print(name)
            return 0
        cfg = load_config(args.config, check=args.command != "validate")
        if args.command == "show":
            from .config import to_ini
            print(to_ini(cfg), end="")
            return 0
        if args.command == "validate":
            rep = ex.validate(cfg, deep=args.deep)
            print(rep.table())
            return 0 if rep.ok else 1
        if args.command == "reference":
            path = ex.generate_reference_trajectory(cfg, args.out)
            print(path)
            return 0
        if args.stride is not None and args.stride < 1:
            raise ConfigError("--stride must be positive")
        if args.command == "run":
            art = ex.run_experiment(cfg, args.out, args.stride, args.max_iter)
            f = art.trace.final
            print(f"{art.trace.status}: {art.trace.iterations} iterations, J1={f.j1:.8f} "
                  f"J2={f.j2:.6e} J={f.j:.10f} dJ={f.delta_j:.3e} -> {art.directory}")
            if art.trace.message:
                print(art.trace.message, file=sys.stderr)
            return art.exit_code
        if args.command == "sweep":
            rows = ex.run_sweep(cfg, args.axis, _values(args.values), args.out, args.stride,
                                args.max_iter, args.workers)
            print(f"{args.axis:>10} {'status':>16} {'J1':>12} {'J2':>12} {'max|eps|':>10} "
                  f"{'iters':>6}")
            for r in rows:
                print(f"{r.value:>10g} {r.status:>16} {r.j1:>12.8f} {r.j2:>12.4e} "
                      f"{r.max_abs_field:>10.5f} {r.iterations:>6d}"
                      + (f"  {r.error}" if r.error else ""))
            return 1 if any(r.status == "failed" for r in rows) else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryLimitError as exc:
        print(f"memory limit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
