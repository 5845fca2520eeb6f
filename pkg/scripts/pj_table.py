"""Table of the early-exit argmax-preservation probability against beta.

Columns: quadrature, orthant closed form, lower bound, and a Monte Carlo
estimate on a random linear net built to have the requested beta.
Run: python3 scripts/pj_table.py --n 200000
"""

import argparse

import numpy as np

from gsgdlab.earlyexit import beta_j, linear_net_with_beta, pj_monte_carlo
from gsgdlab.numerics import RngStream
from gsgdlab.theory import pj_exact, pj_lower_bound, pj_orthant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="Monte Carlo draws per beta")
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    root = RngStream(args.seed)
    print(f"{'beta':>6} {'quadrature':>12} {'orthant':>12} {'lower':>9} {'mc':>9} {'se':>8}")
    for beta in [*np.round(np.arange(0, 1.0, 0.1), 2), 0.99, 1.0]:
        net = linear_net_with_beta(beta, args.d, root.substream(f"net/{beta}"))
        mc = pj_monte_carlo(net, 1, args.n, root.substream(f"mc/{beta}"))
        assert abs(beta_j(net, 1) - beta) < 1e-9
        print(f"{beta:>6.2f} {pj_exact(beta):>12.9f} {pj_orthant(beta):>12.9f} {pj_lower_bound(beta):>9.5f} "
              f"{mc.mean:>9.5f} {mc.std_error:>8.5f}")


if __name__ == "__main__":
    main()
