"""Command-line entry point: ``mbib run|sweep|compare``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import (ConfigError, compare, default_output_dir, load_config,
                         parse_axis, run, sweep)
from .training import TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return default_output_dir(Path(args.config).stem)


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbib", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="train and evaluate one configuration")
    r.add_argument("config")
    r.add_argument("--out")
    s = sub.add_parser("sweep", help="vary one axis over several seeds")
    s.add_argument("config")
    s.add_argument("--axis", required=True,
                   help="beta=0,1,2 | ab_grid=A1,A2;B1,B2 | taps=2,3,4 | topology=star,sequential,all_pairs")
    s.add_argument("--seeds", default="0")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    c = sub.add_parser("compare", help="compare methods over several seeds")
    c.add_argument("config")
    c.add_argument("--methods", default="ce,bsce,bib,mbib")
    c.add_argument("--seeds", default="0")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = _out_dir(args, cfg)
        if args.verb == "run":
            rep = run(cfg, out)
            print(json.dumps({**rep.summary(), "output_dir": str(out)}, indent=2))
        elif args.verb == "sweep":
            axis, points = parse_axis(args.axis)
            rows = sweep(cfg, axis, points, _seeds(args.seeds), out, args.jobs)
            print(f"wrote {len(rows)} rows to {out / 'summary.csv'}")
        else:
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            compare(methods, cfg, _seeds(args.seeds), out, args.jobs)
            print(f"wrote {out / 'comparison.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
