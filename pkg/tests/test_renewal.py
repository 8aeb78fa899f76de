import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rfkac import renewal as rn
from oracles import brute_elongations, scan_h_extrema


def lattice_walk(rng, n, ties=True):
    steps = rng.choice([-1.0, 1.0], n) if ties else rng.standard_normal(n)
    return np.concatenate([[0.0], np.cumsum(steps)])


walks = st.lists(st.sampled_from([-1.0, 1.0]), min_size=1, max_size=400).map(
    lambda s: np.concatenate([[0.0], np.cumsum(s)]))


# --- sample_bbm ------------------------------------------------------------

def test_bbm_origin_and_validation():
    p = rn.sample_bbm(2.0, 0.01, seed=3)
    assert p.values[p.origin] == 0.0
    assert p.kind == "bbm-sample"
    with pytest.raises(ValueError):
        rn.sample_bbm(0.0, 0.1)
    with pytest.raises(ValueError):
        rn.sample_bbm(1.0, -0.1)


def test_bbm_variance_and_independent_sides():
    rng = np.random.default_rng(11)
    n = 10_000
    samples = {t: [] for t in (-4, -1, 1, 4)}
    for _ in range(n):
        p = rn.sample_bbm(4.0, 0.25, rng=rng)
        for t in samples:
            samples[t].append(p.values[p.index_of(t)])
    for t, xs in samples.items():
        var = np.var(xs)
        assert abs(t) * 0.95 <= var <= abs(t) * 1.05, (t, var)
    cov = np.cov(samples[1], samples[-1])[0, 1]
    assert abs(cov) < 3 / math.sqrt(n)


def test_walkpath_validation():
    with pytest.raises(ValueError):
        rn.WalkPath(1.0, np.array([1.0, 2.0]), 0)
    with pytest.raises(ValueError):
        rn.WalkPath(1.0, np.array([0.0, np.inf]), 0)
    with pytest.raises(ValueError):
        rn.WalkPath(1.0, np.array([0.0]), 0, kind="other")


# --- drawdown_extrema ------------------------------------------------------

def test_drawdown_hand_trace():
    rec = rn.drawdown_extrema(rn.WalkPath(1.0, np.array([0, 1, 2, 1, 0.0]), 0), 1.5)
    assert rec.indices.tolist() == [2]
    assert rec.values.tolist() == [2.0]
    assert rec.labels.tolist() == [rn.MAX]
    assert rec.meta["tau"].tolist() == [4]


def test_drawdown_short_path_gives_empty_record():
    rec = rn.drawdown_extrema(rn.WalkPath(1.0, np.array([0, 0.5, 0.2]), 0), 1.0)
    assert len(rec) == 0


def test_first_point_certification():
    # first extremum reached without a prior rise of h is not certified
    v = np.array([0, 0.5, -2, 0.0])
    rec = rn.drawdown_extrema(rn.WalkPath(1.0, v, 0), 1.5)
    assert rec.indices[0] == 1 and not rec.certified[0]


def test_brute_force_scanner():
    rng = np.random.default_rng(5)
    for _ in range(200):
        v = lattice_walk(rng, int(rng.integers(5, 400)))
        h = float(rng.choice([1.0, 2.0, 2.5, 4.0]))
        rec = rn.drawdown_extrema(rn.WalkPath(1.0, v, 0), h)
        got = set(zip(rec.indices[rec.certified].tolist(), rec.labels[rec.certified].tolist()))
        assert got == set(scan_h_extrema(v, h))


def test_record_rejects_bad_patterns():
    with pytest.raises(rn.PropertyViolation):
        rn.RenewalRecord([0, 2, 1], [1, -1, 1], [1, 0, 1], [True] * 3)
    with pytest.raises(rn.PropertyViolation):
        rn.RenewalRecord([0, 1], [1, 1], [1, 0], [True] * 2)
    with pytest.raises(rn.PropertyViolation):
        rn.RenewalRecord([0, 1], [-1, 1], [1, 0], [True] * 2)


@settings(max_examples=60, deadline=None)
@given(walks, st.floats(0.5, 6.0), st.floats(-50, 50))
def test_drawdown_translation_invariance(v, h, c):
    p = rn.WalkPath(1.0, v, 0)
    a = rn.drawdown_extrema(p, h)
    b = rn.drawdown_extrema(p.shifted(c), h, check=False)
    assert a.indices.tolist() == b.indices.tolist()
    assert np.allclose(b.values, a.values + c)


@settings(max_examples=60, deadline=None)
@given(walks, st.floats(0.5, 6.0))
def test_reflection_swaps_labels(v, h):
    # the construction always opens with a drawdown from the running max, so
    # only the certified extrema are reflection symmetric
    a = rn.drawdown_extrema(rn.WalkPath(1.0, v, 0), h)
    b = rn.drawdown_extrema(rn.WalkPath(1.0, -v, 0), h)
    ca = list(zip(a.indices[a.certified].tolist(), a.labels[a.certified].tolist()))
    cb = list(zip(b.indices[b.certified].tolist(), (-b.labels[b.certified]).tolist()))
    assert ca == cb


@settings(max_examples=60, deadline=None)
@given(walks, st.floats(0.5, 6.0))
def test_properties_4ab_on_random_walks(v, h):
    rec = rn.drawdown_extrema(rn.WalkPath(1.0, v, 0), h, check=False)
    rn.check_extrema_properties(rec, v, h)
    if len(rec) > 1:
        assert np.all(np.abs(np.diff(rec.values)) >= h)


# --- maximal_elongations ---------------------------------------------------

def test_elongations_argument_checks():
    p = rn.WalkPath(1.0, np.array([0.0, 1.0]), 0)
    with pytest.raises(ValueError):
        rn.maximal_elongations(p, 1.0, 1.0)
    with pytest.raises(ValueError):
        rn.maximal_elongations(p, 1.0, -0.1)


def test_elongations_equal_extrema():
    rng = np.random.default_rng(8)
    for k in range(100):
        # lattice walks carry value ties; h off the lattice avoids drops of exactly h
        v = lattice_walk(rng, 2000, ties=bool(k % 2))
        h = 2.5 if k % 2 else 3.0
        p = rn.WalkPath(1.0, v, 0)
        el = rn.maximal_elongations(p, h)
        dd = rn.drawdown_extrema(p, h)
        assert set(el.indices[el.certified].tolist()) <= set(el.indices.tolist())
        assert set(dd.indices[dd.certified].tolist()) == set(el.indices[el.certified].tolist())


def test_elongations_brute_force_tiny():
    rng = np.random.default_rng(2)
    for _ in range(150):
        v = np.concatenate([[0.0], np.cumsum(rng.normal(size=int(rng.integers(3, 10))))])
        el = rn.maximal_elongations(rn.WalkPath(1.0, v, 0), 1.0)
        if len(el) < 2:
            continue
        assert tuple(el.indices.tolist()) in {tuple(c) for c in brute_elongations(v, 1.0)}


def test_zigzag_legs():
    b, f = 1.0, 0.2
    amp = b + 2 * f
    leg = np.linspace(0, amp, 5)[1:]
    v = [0.0]
    for k in range(8):
        v.extend(v[-1] + (leg if k % 2 == 0 else -leg))
    v = np.array(v)
    rec = rn.maximal_elongations(rn.WalkPath(1.0, v, 0), b, f)
    assert rec.indices.tolist() == list(range(0, len(v), 4))
    assert (rec.signs[:-1] == -rec.signs[1:]).all()
    assert rec.meta["invalid_legs"] == []


def test_monotone_path_single_elongation():
    v = np.linspace(0, 10, 50)
    rec = rn.maximal_elongations(rn.WalkPath(1.0, v, 0), 1.0)
    assert len(rec) <= 2
    if len(rec) == 2:
        assert rec.signs.tolist() == [1]
    assert not rec.meta["boundary_complete"]


def test_sandwich_on_random_walks():
    rng = np.random.default_rng(4)
    checked = 0
    for _ in range(40):
        v = lattice_walk(rng, 3000, ties=False)
        rec = rn.maximal_elongations(rn.WalkPath(1.0, v, 0), 4.0)
        out = rn.sandwich_check(rec)
        assert out["failures"] == []
        checked += out["checked"]
    assert checked > 0


# --- relabel_S -------------------------------------------------------------

def _record_at(times):
    n = len(times)
    labels = [(-1) ** (k + 1) for k in range(n)]
    values = [0.0 if lab < 0 else 1.0 for lab in labels]
    origin = -min(min(times), 0)
    return rn.RenewalRecord(np.array(times) + origin, labels, values, [True] * n, 1.0, origin)


def test_relabel_example():
    rl = rn.relabel_S(_record_at([-3, -1, 2, 5]), 4)
    assert rl.times[0] == -1 and rl.times[1] == 2
    assert rl.kappa_plus == 2
    # no S_i below -4: sup of the empty set
    assert rl.kappa_minus == -math.inf


def test_relabel_all_positive():
    rl = rn.relabel_S(_record_at([1, 3, 6]), 2)
    assert rl.times[1] == 1
    assert rl.kappa_minus == -math.inf
    assert rl.kappa_plus == 2


def test_relabel_large_Q_is_infinite():
    assert rn.relabel_S(_record_at([-2, 1]), 100).kappa_plus == math.inf


def test_relabel_shift_consistency():
    base = [-7, -3, 2, 9, 12]
    a = rn.relabel_S(_record_at(base), 5)
    b = rn.relabel_S(_record_at([t + 1 for t in base]), 5)
    assert {i: t + 1 for i, t in a.times.items()} == b.times


def test_relabel_empty_record():
    with pytest.raises(ValueError):
        rn.relabel_S(rn.RenewalRecord([], [], [], []), 1.0)


# --- closed-form laws ------------------------------------------------------

@pytest.mark.parametrize("h", [0.5, 1.0, 1.7])
def test_interarrival_density_normalised(h):
    law = rn.theoretical_laws(h)
    f = lambda x: float(law.interarrival_pdf(np.array([x]))[0])
    brk = [0, 0.25 * h * h, h * h, 4 * h * h, 20 * h * h]
    mass = sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
               for a, b in zip(brk, brk[1:]))
    mass += integrate.quad(f, brk[-1], np.inf, epsabs=1e-14)[0]
    mean = sum(integrate.quad(lambda x: x * f(x), a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
               for a, b in zip(brk, brk[1:]))
    mean += integrate.quad(lambda x: x * f(x), brk[-1], np.inf, epsabs=1e-14)[0]
    assert abs(mass - 1) < 1e-8
    assert abs(mean - h * h) < 1e-6


def test_series_branches_agree():
    law = rn.theoretical_laws(1.0)
    x = np.array([0.2499999, 0.25])
    pdf = law.interarrival_pdf(x)
    assert abs(pdf[0] - pdf[1]) < 1e-5
    sf = law.interarrival_sf(x)
    assert abs(sf[0] - sf[1]) < 1e-6
    rc = law.residual_cdf(x)
    assert abs(rc[0] - rc[1]) < 1e-6


def test_residual_cdf_is_integral_of_density():
    law = rn.theoretical_laws(1.3)
    for x in (0.1, 0.9, 3.0):
        q = integrate.quad(lambda s: float(law.residual_pdf(np.array([s]))[0]), 0, x,
                           epsabs=1e-12, limit=200)[0]
        assert abs(q - float(law.residual_cdf(np.array([x]))[0])) < 1e-9


def test_laplace_limits_and_values():
    law = rn.theoretical_laws(1.2)
    assert float(law.interarrival_laplace(0.0)) == 1.0
    assert float(law.residual_laplace(0.0)) == 1.0
    for lam in (0.3, 1.0):
        emp = integrate.quad(lambda x: math.exp(-lam * x) * float(law.interarrival_pdf(np.array([x]))[0]),
                             0, np.inf, limit=200)[0]
        assert abs(emp - float(law.interarrival_laplace(lam))) < 1e-7
        emp = integrate.quad(lambda x: math.exp(-lam * x) * float(law.residual_pdf(np.array([x]))[0]),
                             0, np.inf, limit=200)[0]
        assert abs(emp - float(law.residual_laplace(lam))) < 1e-7


def test_law_domain_errors():
    law = rn.theoretical_laws(1.0)
    with pytest.raises(ValueError):
        law.interarrival_pdf(np.array([0.0]))
    with pytest.raises(ValueError):
        law.residual_cdf(np.array([-1.0]))
    with pytest.raises(ValueError):
        rn.theoretical_laws(0.0)


# --- empirical harness -----------------------------------------------------

def test_empirical_law_test_needs_samples():
    with pytest.raises(ValueError):
        rn.empirical_law_test(np.ones(999), stats.norm.cdf)


def test_inverse_cdf_meta_check():
    # p-values of exact-law samples must be uniform
    law = rn.theoretical_laws(1.0)
    rng = np.random.default_rng(21)
    ps = [rn.empirical_law_test(law.sample_interarrival(1000, rng), law.interarrival_cdf, n_boot=1)["p"]
          for _ in range(100)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_laplace_table_shape():
    law = rn.theoretical_laws(1.0)
    x = law.sample_interarrival(2000, np.random.default_rng(0))
    out = rn.empirical_law_test(x, law.interarrival_cdf, law.interarrival_laplace, n_boot=50)
    assert [r["lambda"] for r in out["laplace"]] == [0.5, 1.0, 2.0]
    for r in out["laplace"]:
        assert r["ci"][0] <= r["empirical"] <= r["ci"][1]
        assert r["rel_err"] < 0.05


def test_bbm_interarrivals_small_run():
    x = rn.bbm_interarrivals(1.0, 1e-3, 1000, seed=1)
    assert len(x) >= 1000
    assert 0.9 < np.mean(x) < 1.1


def test_grid_threshold():
    assert rn.grid_threshold(1.0, 1e-4, corrected=False) == 1.0
    assert rn.grid_threshold(1.0, 1e-4) < 1.0
    with pytest.raises(ValueError):
        rn.grid_threshold(0.1, 1.0)


def test_renewal_count_check():
    rng = np.random.default_rng(6)
    recs = []
    for _ in range(1000):
        p = rn.sample_bbm(30.0, 0.01, rng=rng)
        recs.append(rn.drawdown_extrema(p, rn.grid_threshold(1.0, 0.01), start=0, check=False))
    out = rn.renewal_count_check(recs, [2.0, 10.0], V=1.52, fstar=0.134, g_value=1.0,
                                 gamma_over_delta=2**-8)
    for row in out["rows"]:
        assert row["satisfied_fraction"] >= 0.95
    # elementary renewal theorem with mean h^2 = 1, up to the first-point delay
    assert abs(out["rows"][1]["mean_count"] - 10.0) < 1.5
    with pytest.raises(ValueError):
        rn.renewal_count_check(recs[:10], [1.0], 1.0, 1.0, 1.0, 0.1)


def test_count_before_first_extremum():
    rl = rn.relabel_S(_record_at([-3, 5, 9]), 0.5)
    assert rl.kappa_plus == 1
