"""Early-exit filtering vs full-batch training on the planted-direction task.

Trains both from the same initialisation and batch stream, then reports the
back-propagated samples each needs to reach a target held-out loss.
Run: python3 scripts/sift_demo.py --seeds 5 --keep 0.25
"""

import argparse

import numpy as np

from gsgdlab.earlyexit import PlantedTask, SiftConfig, baseline_train, identity_init_net, sift_train
from gsgdlab.numerics import RngStream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--keep", type=float, default=0.5)
    ap.add_argument("--criterion", choices=["early-loss", "early-entropy"], default="early-loss")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--target", type=float, default=0.3)
    ap.add_argument("--d", type=int, default=20)
    args = ap.parse_args()

    cfg = SiftConfig(keep_fraction=args.keep, criterion=args.criterion, total_steps=args.steps)
    savings = []
    print(f"{'seed':>4} {'sift':>8} {'baseline':>9} {'final sift':>11} {'final base':>11}")
    for i in range(args.seeds):
        s = RngStream(i)
        task = PlantedTask(args.d, s.substream("task"))
        net = identity_init_net(args.d, 2, s.substream("init"))
        a = sift_train(task, net, cfg, s.substream("train"))
        b = baseline_train(task, net, cfg, s.substream("train"))
        ca, cb = a.backprop_to_reach(args.target), b.backprop_to_reach(args.target)
        savings.append(cb - ca)
        print(f"{i:>4} {ca:>8.0f} {cb:>9.0f} {a.eval_loss[-1]:>11.4f} {b.eval_loss[-1]:>11.4f}")
    print(f"mean saving {np.mean(savings):.1f} backprop samples")


if __name__ == "__main__":
    main()
