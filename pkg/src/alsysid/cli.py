"""Command-line entry point: ``alsysid {run,sweep,metrics,export-plots}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import AlsysidError
from .harness import export_plots, metrics_from_files, run, sweep
from .metrics import aggregate


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alsysid",
                                description="Active-learning experiment design for system identification.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--strategy")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out")

    s = sub.add_parser("sweep", help="run several strategies over many seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--strategies", default="passive,ideal,gsx,igs",
                   help="comma-separated list (qbc must be asked for explicitly)")
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default="sweep")

    m = sub.add_parser("metrics", help="recompute metrics from a saved trace")
    m.add_argument("--trace", required=True)
    m.add_argument("--test", required=True)

    e = sub.add_parser("export-plots", help="write per-step median/MAD RMSE curves of a sweep")
    e.add_argument("--sweep", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            cfg = load_config(args.config)
            kw = {k: v for k, v in (("strategy", args.strategy), ("seed", args.seed)) if v is not None}
            cfg = cfg.replace(**kw)
            _, rep = run(cfg, args.out)
            print(json.dumps(rep.to_dict(), indent=2))
            return 0 if rep.status == "ok" else 2
        if args.cmd == "sweep":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.replace(seed=args.seed)
            strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
            res = sweep(cfg, strategies, args.runs or cfg.runs, args.out, args.jobs)
            print(json.dumps({s: v["aggregate"] for s, v in res.items()}, indent=2))
            return 0
        if args.cmd == "metrics":
            rep = metrics_from_files(args.trace, args.test)
            print(json.dumps({"per_run": [rep.to_dict()], "aggregate": aggregate([rep])}, indent=2))
            return 0
        if args.cmd == "export-plots":
            print(export_plots(args.sweep))
            return 0
    except (AlsysidError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
