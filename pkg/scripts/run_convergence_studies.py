#!/usr/bin/env python3
"""Run the shipped epsilon-sweep studies and write results under results/.

Each study solves the cell problems once, sweeps the epsilon ladder, and
writes errors.csv (plot-ready) plus rates.json with the fitted slopes.
"""

import argparse
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from homog.harness import load_config, run_study  # noqa: E402

STUDIES = ["constant_2d", "cosine_1d", "convex_square", "lshape"]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(REPO / "results"))
    parser.add_argument("--only", choices=STUDIES, default=None)
    args = parser.parse_args()

    names = [args.only] if args.only else STUDIES
    for name in names:
        cfg = load_config(REPO / "configs" / f"{name}.json")
        out_dir = Path(args.out) / name
        t0 = time.perf_counter()
        print(f"== {name}")
        result = run_study(cfg, out_dir=out_dir, progress=lambda m: print("  ", m, flush=True))
        for fname, entry in sorted(result.rates_json().items()):
            slope = entry["slope"]
            text = "n/a " if slope is None else f"{slope:+.3f}"
            print(f"   {fname:12s} slope {text}  [{entry['status']}]")
        print(f"   status: {result.status}  ({time.perf_counter() - t0:.1f}s) -> {out_dir}")


if __name__ == "__main__":
    main()
