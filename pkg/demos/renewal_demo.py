"""h-extrema of a Brownian path and their gap law.

    python demos/renewal_demo.py [--h 1.0] [--n 2000] [--seed 0]
"""
import argparse

import numpy as np

from rfkac import renewal as rn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    # one path, its alternating extrema
    W = rn.sample_bbm(20 * a.h**2, 1e-3, seed=a.seed)
    rec = rn.drawdown_extrema(W, a.h)
    cert = rec.certified
    print(f"path on [{W.time(0):.1f}, {W.time(len(W) - 1):.1f}]: {len(rec)} extrema, {cert.sum()} certified")
    for t, lab in list(zip(rec.times[cert], rec.labels[cert]))[:6]:
        print(f"  t={t:8.3f}  {'max' if lab > 0 else 'min'}")

    gaps = rn.bbm_interarrivals(a.h, 1e-3, a.n, seed=a.seed + 1)
    law = rn.theoretical_laws(a.h)
    res = rn.empirical_law_test(gaps, law.interarrival_cdf, law.interarrival_laplace, seed=a.seed)
    print(f"\n{len(gaps)} gaps: mean {gaps.mean():.4f} (theory {law.mean_interarrival():.4f}), KS p={res['p']:.3f}")
    for row in res["laplace"]:
        print(f"  Laplace at {row['lambda']}: empirical {row['empirical']:.4f}  theory {row['theory']:.4f}")
    q = np.quantile(gaps, [0.1, 0.5, 0.9])
    print("  deciles 10/50/90:", " ".join(f"{x:.3f}" for x in q))


if __name__ == "__main__":
    main()
