"""Acceptance suite: one test per criterion, each printing a CRITERION line.

Sizes and tolerances are the ones the criteria name; nothing here is tuned
to make a criterion pass.  Run with ``-m acceptance`` to select only these.
"""
import math
import time

import numpy as np
import pytest
from scipy import integrate

from rfkac import coarse_grain as cg, cumulants as cu, experiments as ex, mean_field as mf
from rfkac import renewal as rn, spin_model as sm
from oracles import (F_STAR, F_STAR_TOL, THETA_C_2, chi_square_vs_exact, random_lattice_profile,
                     raw_enumeration_G, scan_h_extrema)

pytestmark = pytest.mark.acceptance

BETA, THETA = 2.0, 0.2
LAMBDAS = (0.5, 1.0, 2.0)


def run_kind(kind, out, seed, **kw):
    res = ex.run_experiment(ex.ExperimentConfig(kind, seed, out=str(out), **kw))
    assert res.status == 0, [c for c in res.checks if not c["passed"]]
    return res.checks


def crit_checks(checks, cid):
    return [c for c in checks if c["criterion"] == cid]


# --- renewal laws -----------------------------------------------------------

@pytest.fixture(scope="module")
def interarrivals():
    t0 = time.perf_counter()
    gaps = rn.bbm_interarrivals(1.0, 1e-4, 10_000, seed=101)
    return gaps, time.perf_counter() - t0


def test_c01_renewal_mean(interarrivals, record_criterion):
    gaps, secs = interarrivals
    mean = float(gaps.mean())
    ok = len(gaps) >= 10_000 and 0.95 <= mean <= 1.05 and secs < 120
    assert record_criterion(1, ok, f"n={len(gaps)} mean={mean:.4f} runtime={secs:.1f}s")


def test_c02_interarrival_law(interarrivals, record_criterion):
    gaps, _ = interarrivals
    law = rn.theoretical_laws(1.0)
    ks = rn.empirical_law_test(gaps, law.interarrival_cdf, None, seed=1)
    mass = integrate.quad(law.interarrival_pdf, 0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=500)[0]
    mean = integrate.quad(lambda x: x * law.interarrival_pdf(x), 0, np.inf,
                          epsabs=1e-13, epsrel=1e-13, limit=500)[0]
    ok = ks["p"] > 0.01 and abs(mass - 1) <= 1e-8 and abs(mean - 1) <= 1e-6
    assert record_criterion(2, ok, f"KS p={ks['p']:.3f} |mass-1|={abs(mass - 1):.1e} "
                                   f"|mean-h^2|={abs(mean - 1):.1e}")


def test_c03_residual_law(interarrivals, record_criterion):
    gaps, _ = interarrivals
    law = rn.theoretical_laws(1.0)
    s1 = rn.bbm_residuals(1.0, 1e-4, 10_000, seed=102)
    rs = rn.empirical_law_test(s1, law.residual_cdf, law.residual_laplace, LAMBDAS, seed=2)
    ia = rn.empirical_law_test(gaps, law.interarrival_cdf, law.interarrival_laplace, LAMBDAS, seed=3)
    worst_r = max(r["rel_err"] for r in rs["laplace"])
    worst_i = max(r["rel_err"] for r in ia["laplace"])
    ok = rs["p"] > 0.01 and worst_r <= 0.02 and worst_i <= 0.02
    assert record_criterion(3, ok, f"S1 KS p={rs['p']:.3f} Laplace rel err S1={worst_r:.4f} "
                                   f"interarrival={worst_i:.4f}")


# --- extrema ----------------------------------------------------------------

def test_c04_extrema_vs_elongations(record_criterion):
    rng = np.random.default_rng(104)
    bad = 0
    for _ in range(1000):
        v = np.concatenate([[0.0], np.cumsum(rng.standard_normal(10_000))])
        h = float(rng.uniform(2.0, 8.0))
        p = rn.WalkPath(1.0, v, 0)
        el = rn.maximal_elongations(p, h, 0.0)
        dd = rn.drawdown_extrema(p, h)
        a = set(zip(dd.indices[dd.certified].tolist(), dd.labels[dd.certified].tolist()))
        b = set(zip(el.indices[el.certified].tolist(), el.labels[el.certified].tolist()))
        bad += a != b
    assert record_criterion(4, bad == 0, f"1000 walks of length 1e4, disagreements={bad}")


def test_c05_brute_force_oracle(record_criterion):
    rng = np.random.default_rng(105)
    bad = 0
    for k in range(1000):
        n = int(rng.integers(2, 1001))
        # half lattice walks (with value ties), half gaussian
        steps = rng.choice([-1.0, 1.0], n) if k % 2 else rng.standard_normal(n)
        v = np.concatenate([[0.0], np.cumsum(steps)])
        h = float(rng.choice([1.0, 2.0, 2.5, 4.0])) if k % 2 else float(rng.uniform(0.5, 5.0))
        rec = rn.drawdown_extrema(rn.WalkPath(1.0, v, 0), h)
        got = set(zip(rec.indices[rec.certified].tolist(), rec.labels[rec.certified].tolist()))
        bad += got != set(scan_h_extrema(v, h))
    assert record_criterion(5, bad == 0, f"1000 walks of length <= 1e3, mismatches={bad}")


# --- Gamma functional -------------------------------------------------------

def test_c06_gamma_minimality(tmp_path, record_criterion):
    checks = crit_checks(run_kind("gamma-min", tmp_path, 106), 6)
    d = {c["name"]: c for c in checks}
    ok = all(c["passed"] for c in checks)
    assert record_criterion(6, ok, f"1000 paths x 1000 perturbations, nonpositive="
                                   f"{d['Gamma strictly positive off u*']['nonpositive']} "
                                   f"case err={d['case formulas']['err']:.1e} "
                                   f"additivity err={d['additivity']['err']:.1e}")


# --- cumulants --------------------------------------------------------------

def test_c07_cumulant_exactness(record_criterion):
    worst = 0.0
    for n in range(1, 11):
        for K in range(n + 1):
            m = -1 + 2 * K / n
            for d in range(n + 1):
                if max(0, K - (n - d)) > min(d, K):
                    continue
                for lam in (1, -1):
                    inp = cu.BlockCumulantInput(n, d, lam, m, BETA, THETA)
                    worst = max(worst, abs(cu.cumulant_G_exact(inp) - raw_enumeration_G(n, d, m, inp.tilt, BETA)))
    mb = mf.equilibrium_magnetization(BETA, THETA)
    scans = {nh: cu.xi_bound_scan(BETA, THETA, nh, mb) for nh in (128, 512, 2048)}
    xi_ok = all(s["window"]["ok"] for s in scans.values())
    ok = worst <= 1e-12 and xi_ok
    assert record_criterion(7, ok, f"max |G - enumeration|={worst:.1e}, Xi bounds at "
                                   f"n_half 128/512/2048: {'ok' if xi_ok else 'violated'}")


# --- chi statistics and invariance principle --------------------------------

@pytest.fixture(scope="module")
def chi_stats(tmp_path_factory):
    return run_kind("chi-stats", tmp_path_factory.mktemp("chi"), 108)


def test_c08_chi_statistics(chi_stats, record_criterion):
    checks = crit_checks(chi_stats, 8)
    d = {c["name"]: c for c in checks}
    sm_ = d["second moment bracket"]
    ok = all(c["passed"] for c in checks)
    assert record_criterion(8, ok, f"antithetic mean={d['antithetic mean']['value']} "
                                   f"E[chi^2]/eps={sm_['value']:.4f} bracket={sm_['bracket']} "
                                   f"MGF {'ok' if d['MGF bound']['passed'] else 'violated'}")


def test_c09_invariance_principle(chi_stats, record_criterion):
    checks = crit_checks(chi_stats, 9)
    d = {c["name"]: c for c in checks}
    ok = all(c["passed"] for c in checks)
    ratios = ", ".join(f"{r:.3f}" for r in d["variance ratio"]["ratios"])
    assert record_criterion(9, ok, f"KS p={d['W_hat(1) KS vs normal']['p']:.3f} var ratios=[{ratios}]")


# --- mean field -------------------------------------------------------------

def test_c10_mean_field(tmp_path, record_criterion):
    checks = crit_checks(run_kind("mean-field", tmp_path, 110), 10)
    checks += crit_checks(run_kind("instanton", tmp_path, 110), 10)
    tc = mf.theta_c(2.0)
    fs = mf.surface_tension(BETA, THETA)
    oracle_ok = abs(tc - THETA_C_2) <= 1e-10 and abs(fs - F_STAR) <= F_STAR_TOL
    failed = [c["name"] for c in checks if not c["passed"]]
    ok = not failed and oracle_ok
    assert record_criterion(10, ok, f"{len(checks)} checks, failed={failed or 'none'}, "
                                    f"theta_c(2)={tc:.12f} F*={fs:.8f}")


# --- block formulas ---------------------------------------------------------

def _enumerate_multibody(gamma, n, nb):
    """Every field pattern times every lattice profile; returns (count, worst ratio)."""
    half = n // 2
    levels = 2 * np.arange(half + 1) / half - 1
    count, worst = 0, 0.0
    for bits in range(2 ** (n * nb)):
        h = np.array([1 if (bits >> i) & 1 else -1 for i in range(n * nb)], np.int8)
        d = cg.block_decompose(h, gamma, n * gamma)
        for idx in np.ndindex(*([half + 1] * (2 * nb))):
            bp = cg.BlockProfile(n * gamma, levels[list(idx[:nb])], levels[list(idx[nb:])])
            r = cg.multibody_V_exact(bp, d, BETA, THETA)
            count += 1
            if not (r["ok"] and r["pair_ok"]):
                worst = math.inf
            else:
                worst = max(worst, abs(r["gammaV"]) / r["bound"] if r["bound"] else 0.0)
    return count, worst


def test_c11_block_formulas(record_criterion):
    rng = np.random.default_rng(111)
    # identities: block_magnetization raises on any violation
    for _ in range(1000):
        n = int(rng.choice([2, 4, 8, 16, 32]))
        h = sm.random_fields(10 * n, rng)
        c = sm.SpinConfig(sm.random_fields(10 * n, rng), h)
        cg.block_magnetization(c, cg.block_decompose(h, 1 / 512, n / 512))
    # gap bound on tiny instances
    gap_fail = 0
    ds = 2.0**-6
    for k in range(1000):
        ratio = int(rng.choice([2**6, 2**8, 2**10]))
        half = ratio // 2
        bp = cg.BlockProfile(ds, *random_lattice_profile(rng, int(rng.integers(1, 33)), half))
        left = cg.BlockProfile(ds, *random_lattice_profile(rng, 64, half))
        right = cg.BlockProfile(ds, *random_lattice_profile(rng, 64, half))
        r = cg.block_free_energy_compare(bp, ds / ratio, ds, BETA, THETA, left, right)
        gap_fail += not r["ok"]
    instances, worst = 0, 0.0
    for setup in ((1 / 8, 4, 2), (1 / 10, 2, 3)):
        c_, w = _enumerate_multibody(*setup)
        instances += c_
        worst = max(worst, w)
    ok = gap_fail == 0 and worst <= 1.0
    assert record_criterion(11, ok, f"1000 configs ok, gap failures={gap_fail}/1000, "
                                    f"{instances} multibody instances max |gamma V|/(delta*|I|)={worst:.3f}")


# --- sampler ----------------------------------------------------------------

def test_c12_sampler(record_criterion):
    rng = np.random.default_rng(112)
    h = sm.random_fields(8, rng)
    k = sm.KacKernel(0.25)
    c0 = sm.SpinConfig(np.ones(8), h)
    _, p = sm.exact_partition(c0, BETA, THETA, k)
    s = sm.gibbs_sample(c0, BETA, THETA, k, sweeps=1_000_000, rng_seed=113, burn_in=100, thin=2)
    p_gibbs = chi_square_vs_exact(s, p)
    s0 = sm.gibbs_sample(c0, 0.0, THETA, k, sweeps=100_000, rng_seed=114, burn_in=10, thin=1)
    p_unif = chi_square_vs_exact(s0, np.full(256, 1 / 256))
    ok = p_gibbs > 0.01 and p_unif > 0.01
    assert record_criterion(12, ok, f"8 sites, 1e6 samples chi-square p={p_gibbs:.3f}; "
                                    f"beta=0 uniformity p={p_unif:.3f}")


# --- pipeline and law convergence ------------------------------------------

def test_c13_pipeline(tmp_path, record_criterion):
    checks = crit_checks(run_kind("pipeline", tmp_path, 13), 13)
    d = {c["name"]: c for c in checks}
    ok = all(c["passed"] for c in checks)
    assert record_criterion(13, ok, f"gamma=2^-14, 10 replicas, zero runs "
                                    f"{'ok' if d['zero runs at most 2 R2']['passed'] else 'too long'}, "
                                    f"interfaces in C_i: {d['interfaces inside C_i']['fraction']:.0%}")


def test_c14_law_convergence(tmp_path, record_criterion):
    checks = crit_checks(run_kind("law-convergence", tmp_path, 114), 14)
    ks = checks[0]["ks"]
    ok = checks[0]["passed"]
    assert record_criterion(14, ok, "KS along gamma 2^-10, 2^-14, 2^-18: " + ", ".join(f"{x:.3f}" for x in ks))
