"""``mlnc <experiment> [--config FILE] [--seed N] [--out DIR] ...``"""

import argparse
import json
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, apply_overrides, load_yaml, resolve
from .experiments import RUNNERS


def run(cfg, out: Path = None) -> dict:
    """Run one experiment, write its CSVs and ``summary.json``; returns the summary."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.experiment in ("send", "recv"):
        from . import netio
        runner = getattr(netio, cfg.experiment)
    else:
        runner = RUNNERS[cfg.experiment]
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, **runner(cfg, out)}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlnc", description="Multi-link coded transport experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="YAML file with overrides of the defaults")
    ap.add_argument("--seed", type=int, help="RNG seed (same seed, same outputs)")
    ap.add_argument("--out", help="output directory (default out/<experiment>)")
    ap.add_argument("--links", type=int, help="number of links (modem-count: largest count)")
    ap.add_argument("--k", type=int, help="data symbols per block")
    ap.add_argument("--m", type=int, help="parity symbols per block")
    ap.add_argument("--rate-bps", type=float, help="source data rate in bit/s")
    ap.add_argument("--quiet", action="store_true", help="do not print the summary")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_yaml(args.config) if args.config else {}
        data = apply_overrides(data, seed=args.seed, out=args.out, links=args.links, k=args.k,
                               m=args.m, rate_bps=args.rate_bps)
        cfg = resolve(args.experiment, data)
        summary = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
