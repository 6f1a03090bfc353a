"""Command line entry point: ``vqmargin <command> --config run.json``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import experiments as ex
from .config import U64, ExperimentConfig, load_config
from .verify import SUITES, run_suites

log = logging.getLogger("vqmargin")

COMMANDS = ("convergence", "margin-report", "minimax-demo", "erm", "verify")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vqmargin",
                                description="Margin conditions and convergence rates for k-point quantizers.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=name != "verify", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override master_seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        s.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            s.add_argument("--suite", action="append", choices=sorted(SUITES),
                           help="run only this suite (repeatable)")
            s.add_argument("--mutate-tiebreak", action="store_true",
                           help="break nearest-neighbor ties toward the largest index; the suites should fail")
    return p


def _config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise ValueError(f"config is for {cfg.command!r}, not {args.command!r}")
    else:
        cfg = ExperimentConfig(command=args.command)
    if args.seed is not None:
        if not 0 <= args.seed < U64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    return cfg


def _verify(cfg: ExperimentConfig, args) -> int:
    names = args.suite or cfg.suites
    report = run_suites(names, seed=cfg.master_seed, mutate_tiebreak=args.mutate_tiebreak)
    out = Path(args.out if args.out is not None else cfg.out_dir)
    ex.write_json(out / "verify_report.json", {"command": "verify", **report})
    for s in report["suites"]:
        status = "PASS" if s["passed"] else "FAIL"
        print(f"{status}  {s['name']:<16} {s['seconds']:8.2f}s")
        if s["error"]:
            print(f"      error: {s['error']}")
        for c in s["checks"]:
            if not c["passed"]:
                print(f"      failed: {c['name']}")
    return 0 if report["passed"] else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        cfg = _config(args)
    except (ValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    if args.command == "verify":
        return _verify(cfg, args)
    try:
        result = ex.RUNNERS[args.command](cfg, threads=args.threads, out_dir=args.out)
    except ex.CertificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # config passes the schema but does not suit the command (e.g. k=1 for margin-report)
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    fit = result.get("fit")
    if fit:
        print(f"slope {fit['slope']:.3f}  95% CI [{fit['ci_low']:.3f}, {fit['ci_high']:.3f}]")
    if args.command == "margin-report":
        m = result["margin"]
        print(f"verdict {m['verdict']}  B={m['B']:.6g}  p_min={m['p_min']:.6g}  r0={m['r0_tested']:.6g}"
              f"  kappa0={m['kappa0']}")
    out = args.out if args.out is not None else cfg.out_dir
    print(f"wrote results to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
