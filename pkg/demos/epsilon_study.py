"""Linear growth of the perturbation and of the contraction ratio with epsilon."""

import argparse

from swirlshock.harness.config import default_config
from swirlshock.harness.sweep import analyze, sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    cfg = default_config(numerics={"n1": args.grid, "n2": args.grid})
    eps = [5e-4, 1e-3, 2e-3, 4e-3]
    rows = sweep(cfg, "epsilon", eps, workers=args.workers)
    print(f"{'epsilon':>9} {'norm':>12} {'norm/eps':>9} {'ratio':>8} {'iters':>5} {'W6(M)':>12}")
    for r in rows:
        print(f"{r['value']:9.1e} {r['norm']:12.5e} {r['norm_over_value']:9.4f} "
              f"{r['first_ratio']:8.5f} {r['iterations']:5d} {r['W6M']:12.4e}")
    s = analyze("epsilon", rows)
    print(f"fit norm = K eps: K = {s['K']:.4f}, max deviation {100 * s['max_relative_deviation']:.2f}%")


if __name__ == "__main__":
    main()
