"""``gsgd-lab`` command line: race, verify, pj, sift."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import COMMANDS, ConfigError, load_config, shipped_configs
from .errors import DivergenceError
from .harness import THREADS_ENV, run_command

DEFAULT_CONFIGS = {"race": "race-default", "verify": "full-suite", "pj": "pj-grid", "sift": "sift-default"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsgd-lab",
        description="Greedy-selection SGD laboratory.",
        epilog=f"Set {THREADS_ENV} to split race replicates across threads. Shipped configs: "
        + ", ".join(shipped_configs()),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} command")
        p.add_argument("--config", default=DEFAULT_CONFIGS[name],
                       help="config file path or shipped config name (default: %(default)s)")
        p.add_argument("--out", default=None, help="output directory (default: out/<command>)")
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed overriding the config's")
        p.add_argument("--strict", action="store_true", help="treat WARN as failure")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(f"config {args.config!r} is for command {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out or Path("out") / args.command)
        result = run_command(cfg, out, args.strict)
    except (ConfigError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for r in result.reports:
        print(f"{r.status:4s}  {r.check:18s} {r.params_text()}")
    code = result.exit_code(args.strict)
    counts = {s: sum(r.status == s for r in result.reports) for s in ("PASS", "WARN", "FAIL")}
    print(f"{counts['PASS']} pass, {counts['WARN']} warn, {counts['FAIL']} fail -> {out} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
