"""Mean-field constants, then the random step profile u* of a Brownian
field and the cost Gamma of flipping it on random intervals.

    python demos/u_star_demo.py [--beta 2] [--theta 0.2] [--seed 0]
"""
import argparse

import numpy as np

from rfkac import mean_field as mf, profiles as pf, renewal as rn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--theta", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    mb = mf.equilibrium_magnetization(a.beta, a.theta)
    fs = mf.surface_tension(a.beta, a.theta)
    V = mf.field_strength_V(a.beta, a.theta, mb)
    h = 2 * fs / V
    print(f"m_beta = ({mb.m1:.8f}, {mb.m2:.8f})  F* = {fs:.8f}  V = {V:.6f}  h = {h:.5f}")

    rng = np.random.default_rng(a.seed)
    W = rn.sample_bbm(2.0, 1e-4, rng=rng)
    u = pf.u_star_from_bbm(rn.drawdown_extrema(W, h), (mb.m1, mb.m2))
    print(f"u* on {u.domain}: start {'+' if u.start > 0 else '-'}, {len(u.jumps)} jumps")
    print("  jumps:", " ".join(f"{j:.4f}" for j in u.jumps[:10]), "..." if len(u.jumps) > 10 else "")

    a_, b_ = u.domain
    for _ in range(5):
        s0, s1 = np.sort(rng.uniform(a_, b_, 2))
        v = pf.flip_on(u, [(s0, s1)])
        g = pf.gamma_functional(v, u, W, u.domain, fs, V)
        print(f"  flip on [{s0:+.3f}, {s1:+.3f}): Gamma = {g.value:.5f} "
              f"(jumps {g.jump_part:+.4f}, field {g.field_part:+.4f})")


if __name__ == "__main__":
    main()
