"""CUSPAD accuracy against window length on the 18-bus case."""

import argparse
import dataclasses

from cuspad.experiment import PRESETS, run_window_sweep, window_check, window_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[5, 10, 20, 30, 40])
    ap.add_argument("--instr-range", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--cache", default=".cuspad-cache")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg = dataclasses.replace(PRESETS["net18"], seed=args.seed)
    sweep = run_window_sweep(cfg, args.sizes, args.instr_range, cache_dir=args.cache, jobs=args.jobs)
    print(window_sweep_csv(sweep), end="")
    if {20, 30, 40} <= set(sweep):
        print(window_check(sweep).line())


if __name__ == "__main__":
    main()
