"""Run every shipped experiment config and write results under one directory.

    python scripts/run_experiments.py [outdir] [--only NAME ...] [--workers N]

Each config ``configs/experiments/NAME.json`` produces ``outdir/NAME/<kind>.csv``
and its manifest.  The exit code is nonzero if any oracle check fails.
"""
import argparse
import time
from pathlib import Path

from iceval import experiments as ex

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "experiments"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="out")
    ap.add_argument("--only", nargs="*", help="config names without .json")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    status = 0
    for path in sorted(CONFIGS.glob("*.json")):
        if args.only and path.stem not in args.only:
            continue
        cfg = ex.ExperimentConfig.load(path)
        t0 = time.perf_counter()
        report = ex.run(cfg, args.workers)
        out = report.write(Path(args.outdir) / path.stem, cfg.kind)
        print(f"{path.stem:24s} {cfg.kind:13s} {time.perf_counter() - t0:7.1f}s  {out}")
        status |= 0 if report.ok else 1
    return status


if __name__ == "__main__":
    raise SystemExit(main())
