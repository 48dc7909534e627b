#!/usr/bin/env python3
"""Recalibrate the per-regime unstable learning rates.

Finds, for each stack regime, the smallest learning rate giving at
least 50% divergence over 8 probe seeds (log-bisection), which is how
the frozen constants in rksp.lab.presets were produced. Takes a few
minutes at the default desk scale.

Usage: python scripts/calibrate_lr_band.py [--steps 400] [--probe-seeds 8]
"""

import argparse
import time

from rksp.lab.presets import calibrate_unstable_lr
from rksp.lab.stacks import StackSpec


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--probe-seeds", type=int, default=8)
    args = parser.parse_args()

    for regime, seed in (("noorm_like", 23), ("preln_like", 11)):
        start = time.time()
        lr = calibrate_unstable_lr(StackSpec(regime=regime, seed=seed),
                                   probe_seeds=args.probe_seeds,
                                   steps=args.steps)
        print(f"{regime}: unstable lr = {lr:.4f}  ({time.time() - start:.0f}s)")


if __name__ == "__main__":
    main()
