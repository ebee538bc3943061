"""Command line entry point: ``uavtrust run|sweep-latency|sweep-throughput|audit-dump``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .baselines import SchemeId
from .errors import ConfigError
from .harness import (
    BrokenChain,
    audit_dump,
    load_config,
    parse_range,
    run_scenario,
    sweep_latency,
    sweep_throughput,
    write_run,
    write_sweep,
)
from .ledger import LedgerError

log = logging.getLogger("uavtrust")

SCHEME_CHOICES = [s.value for s in SchemeId]


def _error(kind: str, fld: str, message: str) -> int:
    print(f"error\t{kind}\t{fld}\t{message}", file=sys.stderr)
    return 2


def _apply_common(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "replicas", None) is not None:
        if args.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")
        cfg.replicas = args.replicas
    if getattr(args, "schemes", None):
        cfg.schemes = [SchemeId.parse(s) for s in args.schemes.split(",")]
    if getattr(args, "no_trace", False):
        cfg.trace = False
    return cfg


def cmd_run(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    out = run_scenario(cfg, SchemeId.parse(args.scheme), cfg.seed)
    paths = write_run(out, args.out)
    done = len(out.completed())
    print(f"{out.scheme.value}: {done}/{len(out.results)} tasks completed; results in {paths['metrics'].parent}")
    return 0


def _sweep(args, fn, values, stem) -> int:
    cfg = _apply_common(load_config(args.config), args)
    cfg.trace = False
    res = fn(cfg, values)
    paths = write_sweep(res, args.out, stem)
    for row in res.rows:
        if row["kind"] == "aggregate":
            print(f"{row['scheme']:<15} {row['sweep']}={row['value']:>4}  latency_mean={row['latency_mean_ms']:>12}  "
                  f"throughput={row['throughput_tps']}")
    print(f"wrote {paths['metrics']}")
    return 0


def cmd_sweep_latency(args) -> int:
    return _sweep(args, sweep_latency, parse_range(args.lengths), "latency")


def cmd_sweep_throughput(args) -> int:
    return _sweep(args, sweep_throughput, parse_range(args.uavs), "throughput")


def cmd_audit_dump(args) -> int:
    try:
        text = Path(args.ledger).read_bytes()
    except OSError as exc:
        return _error("IOError", "ledger", str(exc))
    try:
        sys.stdout.write(audit_dump(text))
    except BrokenChain as exc:
        print(f"error\tBrokenAt\t{exc.height}\t{exc}", file=sys.stderr)
        return 3
    except LedgerError as exc:
        return _error("LedgerError", "ledger", str(exc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavtrust", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario with one scheme")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--scheme", choices=SCHEME_CHOICES, default=SchemeId.PROPOSED.value)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    for name, flag, helptext, func in (
        ("sweep-latency", "--lengths", "SFC lengths, e.g. 2,4,6,8,10", cmd_sweep_latency),
        ("sweep-throughput", "--uavs", "UAV counts, e.g. 10:100:10", cmd_sweep_throughput),
    ):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument(flag, required=True, help=helptext)
        s.add_argument("--seed", type=int)
        s.add_argument("--replicas", type=int)
        s.add_argument("--schemes", help="comma-separated subset of " + ",".join(SCHEME_CHOICES))
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    a = sub.add_parser("audit-dump", help="reconstruct task timelines from a ledger dump")
    a.add_argument("--ledger", required=True)
    a.set_defaults(func=cmd_audit_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error("ConfigError", exc.field, exc.message)
    except ValueError as exc:
        return _error("ValueError", "-", str(exc))


if __name__ == "__main__":
    sys.exit(main())
