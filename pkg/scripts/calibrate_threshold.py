"""False-detection rate of the jump detector on noise-only streams.

Prints the rate for a range of thresholds and the smallest threshold that
keeps it under 1% for 4 s streams at the default PMU noise level.
"""

import argparse

import numpy as np

from cuspad.features import calibrate_jump_threshold, false_detection_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=0.104)
    ap.add_argument("--streams", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("threshold,false_detection_rate")
    for thr in np.arange(0.5, 2.51, 0.1):
        print(f"{thr:.1f},{false_detection_rate(thr, args.sigma, args.streams, seed=args.seed):.4f}")
    best = calibrate_jump_threshold(args.sigma, n_streams=args.streams, seed=args.seed)
    print(f"smallest threshold under 1%: {best:.2f} deg")


if __name__ == "__main__":
    main()
