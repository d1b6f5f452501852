"""Solve one perturbed case and plot the shock and the pressure field."""

import argparse

import numpy as np

from swirlshock.harness.config import default_config
from swirlshock.harness.pipeline import solve_case
from swirlshock.harness.verify import verify


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epsilon", type=float, default=2e-3)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--plot", help="write a figure to this path (needs matplotlib)")
    args = p.parse_args()
    cfg = default_config(perturbation={"epsilon": args.epsilon},
                         numerics={"n1": args.grid, "n2": args.grid})
    b = solve_case(cfg)
    bg = b.background
    th = np.linspace(0.0, b.shock.theta_wall, 9)
    print(f"background shock r_b = {bg.r_b:.10f}")
    for t, x in zip(th, b.shock(th)):
        print(f"  theta {t:.4f}  xi {x:.10f}  xi - r_b {x - bg.r_b:+.3e}")
    rep = verify(b)
    print("verify:", "all checks passed" if rep["passed"] else
          "failed " + ", ".join(k for k, c in rep["checks"].items() if not c["passed"]))
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        ef = b.eulerian
        R = np.broadcast_to(ef.r[:, None], ef.theta.shape)
        x, y = R * np.cos(ef.theta), R * np.sin(ef.theta)
        fig, ax = plt.subplots(figsize=(7, 3.5))
        pc = ax.pcolormesh(x, y, ef.values[3], shading="gouraud")
        ts = np.linspace(0.0, b.shock.theta_wall, 100)
        xs = b.shock(ts)
        ax.plot(xs * np.cos(ts), xs * np.sin(ts), "w-", lw=1)
        ax.set_aspect("equal")
        fig.colorbar(pc, ax=ax, label="P")
        fig.savefig(args.plot, dpi=150, bbox_inches="tight")
        print("wrote", args.plot)


if __name__ == "__main__":
    main()
