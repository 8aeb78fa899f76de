import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfkac import coarse_grain as cg, mean_field as mf, profiles as pf, spin_model as sm
from oracles import M_BETA, random_lattice_profile

seeds = st.integers(0, 2**32 - 1)


def test_constant_plus_field_block():
    n = 8
    d = cg.block_decompose(np.ones(n, np.int8), 1 / 64, n / 64)
    assert d.lam[0] == 1
    assert np.array_equal(d.in_bplus[0], np.arange(n) < n // 2)
    assert np.array_equal(d.in_d[0], np.arange(n) >= n // 2)
    assert d.p[0] == 1.0


def test_balanced_block():
    d = cg.block_decompose(np.array([1, -1, -1, 1, 1, -1], np.int8), 1 / 60, 6 / 60)
    assert d.lam[0] == 0 and d.d_count[0] == 0 and d.p[0] == 0
    # B+ is the set of + sites
    assert np.array_equal(d.in_bplus[0], np.array([1, 0, 0, 1, 1, 0], bool))


def test_alignment_errors():
    with pytest.raises(cg.AlignmentError):
        cg.block_decompose(np.ones(7, np.int8), 1 / 64, 8 / 64)
    with pytest.raises(cg.AlignmentError):
        cg.block_sites(1 / 64, 3 / 64)


def test_lambda_statistics():
    rng = np.random.default_rng(0)
    n, nb = 16, 100_000
    d = cg.block_decompose(sm.random_fields(n * nb, rng), 1 / 1024, n / 1024)
    lam = d.lam
    assert abs(lam.mean()) <= 4 * lam.std() / math.sqrt(nb)
    p0 = math.comb(n, n // 2) / 2**n
    f0 = np.mean(lam == 0)
    assert abs(f0 - p0) <= 3 * math.sqrt(p0 * (1 - p0) / nb)


@settings(max_examples=50, deadline=None)
@given(seeds, st.sampled_from([2, 4, 8, 16]))
def test_decomposition_structure(seed, n):
    rng = np.random.default_rng(seed)
    nb = 20
    d = cg.block_decompose(sm.random_fields(n * nb, rng), 1 / 256, n / 256, start=3 * n)
    assert d.x0 == 3
    assert np.all(d.in_bplus.sum(axis=1) == n // 2)
    # D sits inside the complement of B^-lambda and is empty when lambda = 0
    assert np.all(d.d_count[d.lam == 0] == 0)
    assert np.array_equal(d.d_count, np.abs(d.n_plus - n // 2))


def test_all_plus_spins():
    rng = np.random.default_rng(1)
    h = sm.random_fields(64, rng)
    d = cg.block_decompose(h, 1 / 64, 8 / 64)
    bp = cg.block_magnetization(sm.SpinConfig(np.ones(64), h), d)
    assert np.all(bp.m1 == 1) and np.all(bp.m2 == 1)
    assert bp.on_lattice(1 / 64)


@settings(max_examples=100, deadline=None)
@given(seeds, st.sampled_from([2, 4, 8, 16, 32]))
def test_block_identities(seed, n):
    # block_magnetization asserts both identities internally
    rng = np.random.default_rng(seed)
    h = sm.random_fields(10 * n, rng)
    c = sm.SpinConfig(sm.random_fields(10 * n, rng), h)
    d = cg.block_decompose(h, 1 / 512, n / 512)
    bp = cg.block_magnetization(c, d)
    S = c.spins.reshape(-1, n).astype(float)
    H = h.reshape(-1, n).astype(float)
    assert np.array_equal(S.sum(1) / n, bp.m_tilde)
    sd = np.where(d.in_d, S, 0).sum(1)
    assert np.array_equal((H * S).sum(1) / n, 0.5 * (bp.m1 - bp.m2) + d.lam * 2 * sd / n)


def test_delta_average():
    bp = cg.BlockProfile.constant((0.3, -0.2), 16, 1 / 16)
    a = cg.delta_average(bp, 1 / 4)
    assert np.allclose(a.m1, 0.3) and len(a) == 4
    again = cg.delta_average(cg.BlockProfile(1 / 4, a.m1, a.m2, a.x0), 1 / 4)
    assert np.array_equal(again.m1, a.m1)
    m1 = np.array([1.0, 1.0, 1.0, -1.0])
    step = cg.delta_average(cg.BlockProfile(1 / 16, m1, m1), 1 / 4)
    assert step.m1[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cg.delta_average(bp, 1 / 24)


def _const_bp(m, units=4, per=16):
    return cg.BlockProfile.constant(m, units * per, 1 / per)


def test_eta_phases():
    mb = mf.MagnetizationPair(*M_BETA)
    z = mb.m_tilde / 2
    assert np.all(cg.eta_indicator(_const_bp(mb), 1 / 4, z, mb).values == 1)
    assert np.all(cg.eta_indicator(_const_bp(mb.T()), 1 / 4, z, mb).values == -1)
    # (0,0) sits at l1 distance m1 + m2 from both phases
    assert np.all(cg.eta_indicator(_const_bp((0.0, 0.0)), 1 / 4, 0.9 * mb.m_tilde, mb).values == 0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_eta_two_definitions_agree(seed):
    rng = np.random.default_rng(seed)
    mb = mf.MagnetizationPair(*M_BETA)
    n = 3 * 8
    m1 = np.where(rng.random(n) < 0.7, mb.m1, -mb.m2) + rng.normal(0, 0.05, n)
    m2 = np.where(rng.random(n) < 0.7, mb.m2, -mb.m1) + rng.normal(0, 0.05, n)
    bp = cg.BlockProfile(1 / 8, np.clip(m1, -1, 1), np.clip(m2, -1, 1))
    a = cg.eta_indicator(bp, 1 / 4, 0.3, mb, check=True)
    assert set(a.values) <= {-1, 0, 1}


def test_single_interface_examples():
    eta = cg.EtaSequence(0, np.array([1, 1, 1, 0, 0, -1, -1, -1]))
    assert cg.detect_single_interface(eta, 2) == 3.5
    assert cg.detect_single_interface(cg.EtaSequence(0, np.ones(8, int)), 2) is None
    two = cg.EtaSequence(0, np.array([1, 1, 0, 1, 0, -1, -1, -1, -1]))
    assert cg.detect_single_interface(two, 2) is None
    with pytest.raises(ValueError):
        cg.detect_single_interface(eta, 4)


def _interface_bp(x_jump_blocks, gamma, n_sites, units, mb, left_sign=-1):
    """Block profile in phase left_sign left of the block index and the
    other phase right of it; the profile spans +-units Kac units."""
    ds = n_sites * gamma
    per = int(round(1 / ds))
    x = np.arange(-units * per, units * per)
    s = np.where(x < x_jump_blocks, left_sign, -left_sign)
    m1 = np.where(s > 0, mb.m1, -mb.m2)
    m2 = np.where(s > 0, mb.m2, -mb.m1)
    return cg.BlockProfile(ds, m1, m2, int(x[0]))


def test_neighborhood_membership():
    mb = mf.MagnetizationPair(*M_BETA)
    gamma, n, units = 1 / 64, 4, 32
    dom = (-units * gamma, units * gamma)
    rho = 8 * gamma
    delta = 1 / 8
    u_const = pf.StepProfile(dom, 1, [], M_BETA)
    flat = _interface_bp(10**9, gamma, n, units, mb, left_sign=1)
    assert cg.neighborhood_membership(flat, u_const, gamma, delta, 0.2, rho, 2, mb)["member"]
    u = pf.StepProfile(dom, -1, [0.0], M_BETA)
    good = _interface_bp(0, gamma, n, units, mb)
    r = cg.neighborhood_membership(good, u, gamma, delta, 0.2, rho, 2, mb)
    assert r["member"] and r["interfaces"][0]["l0"] is not None
    # interface 20 Kac units to the right: inside B, so the closeness clause fails
    bad = _interface_bp(20 * 16, gamma, n, units, mb)
    r = cg.neighborhood_membership(bad, u, gamma, delta, 0.2, rho, 2, mb)
    assert not r["member"] and r["bad_B_cells"]


@pytest.mark.parametrize("ratio", [2**6, 2**8, 2**10])
def test_block_free_energy_gap(ratio):
    rng = np.random.default_rng(ratio)
    ds = 2.0**-6
    gamma = ds / ratio
    half = ratio // 2
    per = 64
    for _ in range(50):
        nb = int(rng.integers(1, 129))
        bp = cg.BlockProfile(ds, *random_lattice_profile(rng, nb, half))
        left = cg.BlockProfile(ds, *random_lattice_profile(rng, per, half))
        right = cg.BlockProfile(ds, *random_lattice_profile(rng, per, half))
        r = cg.block_free_energy_compare(bp, gamma, ds, 2.0, 0.2, left, right)
        assert r["ok"] and r["stirling_ok"]
        rt = cg.block_free_energy_compare(bp.T(), gamma, ds, 2.0, 0.2, left.T(), right.T())
        assert rt["Fhat"] == pytest.approx(r["Fhat"], rel=1e-12, abs=1e-14)


def test_multibody_single_block_zero():
    h = np.array([1, 1, -1, 1], np.int8)
    d = cg.block_decompose(h, 1 / 8, 4 / 8)
    bp = cg.BlockProfile(0.5, [0.0], [0.0])
    assert cg.multibody_V_exact(bp, d, 2.0, 0.2)["gammaV"] == 0.0


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from([(1 / 8, 4, 2), (1 / 8, 4, 3), (1 / 10, 2, 3), (1 / 12, 6, 2)]))
def test_multibody_two_groupings(seed, setup):
    gamma, n, nb = setup
    rng = np.random.default_rng(seed)
    h = sm.random_fields(n * nb, rng)
    d = cg.block_decompose(h, gamma, n * gamma)
    bp = cg.BlockProfile(n * gamma, *random_lattice_profile(rng, nb, n // 2))
    ex = cg.multibody_V_exact(bp, d, 2.0, 0.2)
    assert ex["ok"] and ex["pair_ok"]
    if n * nb <= 16:
        assert cg.multibody_V_grouped(bp, d, 2.0, 0.2) == pytest.approx(ex["gammaV"], abs=1e-12)


def test_block_profile_csv(tmp_path):
    bp = cg.BlockProfile.constant((0.5, -0.5), 4, 0.25)
    p = tmp_path / "b.csv"
    bp.write_csv(p)
    assert p.read_text().splitlines()[0] == "block_index,m1,m2,lambda,d_count,p"
