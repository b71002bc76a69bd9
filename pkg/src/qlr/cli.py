"""Command-line entry point: ``qlr greens|groundstate|oracle --config <path>``."""
from __future__ import annotations

import argparse
import sys

from .counting import DegenerateReferenceError
from .driver import EXIT_CONFIG, ConfigError, ExperimentConfig, run

_MODES = {"greens": "greens", "groundstate": "groundstate", "oracle": "oracle"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlr", description="Counted Lanczos Green's functions and ground states.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("greens", "Green's function from counted coefficients"),
                        ("groundstate", "Krylov ground state with lambda chaining"),
                        ("oracle", "Green's function from exact Lanczos coefficients")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--shots", type=int, help="override shots per counted quantity")
        sp.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
        sp.add_argument("--trace", action="store_true", help="write per-shot trace.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        over = {"mode": _MODES[args.command]}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.shots is not None:
            over["shots"] = args.shots
        cfg = cfg.replace(**over)
        result = run(cfg, trace=args.trace)
    except (ConfigError, DegenerateReferenceError) as exc:
        print(f"qlr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = result.write(args.out_dir)
    sys.stdout.write(result.artifacts["report.txt"])
    for path in paths:
        print(f"wrote {path}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
