"""Paired SGD vs GSGD race on the default noisy least-squares instance.

Prints the mean averaged-iterate loss of both methods and their gap at a few
checkpoints, for several values of R. Run: python3 scripts/run_race.py --K 2000
"""

import argparse
import math

import numpy as np

from gsgdlab.numerics import RngStream
from gsgdlab.optimizers import StepSchedule, race
from gsgdlab.oracle import EXACT, NoiseModel
from gsgdlab.problems import noisy_least_squares


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--R", type=int, nargs="+", default=[2, 8, 32])
    ap.add_argument("--sigma", type=float, default=0.0, help="log-noise level for the approximate losses")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    problem = noisy_least_squares()
    schedule = StepSchedule(0.1 / problem.L)
    w0 = problem.w_star - 5.0 * np.ones(problem.dim) / math.sqrt(problem.dim)
    noise = EXACT if args.sigma == 0 else NoiseModel("log-multiplicative", args.sigma)
    checkpoints = sorted({k for k in (10, 50, 100, 500, 1000, args.K) if k <= args.K})

    print(f"{'R':>4} {'k':>6} {'sgd':>10} {'gsgd':>10} {'gap':>10} {'se':>9}")
    for R in args.R:
        s = race(problem, R, noise, schedule, args.K, w0, args.seeds, RngStream(args.seed).substream(f"R={R}"),
                 record_every=10)
        for k in checkpoints:
            i = s.at(k)
            print(f"{R:>4} {k:>6} {s.mean['sgd'][i]:>10.4f} {s.mean['gsgd'][i]:>10.4f} "
                  f"{s.gap[i]:>10.4f} {s.gap_se[i]:>9.4f}")


if __name__ == "__main__":
    main()
