"""Shock position of the radial background as the exit pressure varies."""

import argparse

import numpy as np

from swirlshock.background import exit_pressure_range, shoot_shock_position
from swirlshock.gas import mach
from swirlshock.harness.config import default_config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", type=int, default=12)
    args = p.parse_args()
    cfg = default_config()
    rng = exit_pressure_range(cfg.inlet, cfg.geometry, cfg.gas)
    print(f"admissible exit pressures ({rng.P1:.10f}, {rng.P2:.10f})")
    pad = 1e-3 * (rng.P2 - rng.P1)
    print(f"{'P_e':>12} {'r_b':>14} {'M-':>8} {'M+':>8} {'S+ - S-':>10}")
    for Pe in np.linspace(rng.P1 + pad, rng.P2 - pad, args.points):
        bg = shoot_shock_position(Pe, cfg.inlet, cfg.geometry, cfg.gas)
        Mm = float(mach(bg.upstream_shock_state, cfg.gas))
        Mp = float(mach(bg.downstream_shock_state, cfg.gas))
        print(f"{Pe:12.6f} {bg.r_b:14.10f} {Mm:8.4f} {Mp:8.4f} {bg.S_plus - bg.S_minus:10.6f}")


if __name__ == "__main__":
    main()
