"""Accuracy table (AD vs CUSPAD over instrumentation error) for one network.

    python3 scripts/run_table.py net18 --out out/net18
    python3 scripts/run_table.py net118 --trials 10 --out out/net118_quick
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from cuspad.experiment import PRESETS, run_accuracy_grid, trend_check


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("network", choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--cache", default=".cuspad-cache")
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = dataclasses.replace(PRESETS[args.network], seed=args.seed)
    if args.trials:
        cfg = dataclasses.replace(cfg, trials=args.trials)
    grid = run_accuracy_grid(cfg, args.cache, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(grid.table(w, f"{args.network}, wind {w:.0%}") for w in cfg.wind_fractions)
    (out / f"table_{args.network}.md").write_text(text)
    print(text)
    wind = 0.3 if args.network == "net118" else cfg.wind_fractions[0]
    drop = 15.0 if args.network == "net118" else 4.0
    if wind in cfg.wind_fractions:
        print(trend_check(f"{args.network} trend", grid, wind, 2.0, drop).line())


if __name__ == "__main__":
    main()
