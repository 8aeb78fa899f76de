"""Block-spin coarse graining and block-level observables.

Positions: block x covers the macro interval [x delta*, (x+1) delta*), i.e.
the sites x n, ..., x n + n - 1 with n = delta*/gamma.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import mean_field as mf
from .spin_model import SpinConfig

__all__ = ["BlockDecomposition", "BlockProfile", "EtaSequence", "block_decompose",
           "block_magnetization", "delta_average", "eta_indicator", "eta_indicator_integral",
           "detect_single_interface", "neighborhood_membership", "block_free_energy_compare",
           "multibody_V_exact", "multibody_V_grouped", "AlignmentError", "block_sites"]


class AlignmentError(ValueError):
    pass


def block_sites(gamma: float, delta_star: float) -> int:
    n = delta_star / gamma
    k = int(round(n))
    if abs(n - k) > 1e-9 or k < 2 or k % 2:
        raise AlignmentError("delta*/gamma must be an even integer")
    return k


@dataclass
class BlockDecomposition:
    gamma: float
    delta_star: float
    x0: int                  # index of the first block
    lam: np.ndarray          # (nb,) in {-1, 0, 1}
    l_site: np.ndarray       # (nb,) l(x) as a site offset inside the block, -1 when lambda = 0
    in_bplus: np.ndarray     # (nb, n) bool: site belongs to B+
    in_d: np.ndarray         # (nb, n) bool: site belongs to D
    n_plus: np.ndarray       # |A+(x)|

    @property
    def n(self) -> int:
        return self.in_bplus.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.lam)

    @property
    def d_count(self) -> np.ndarray:
        return self.in_d.sum(axis=1)

    @property
    def p(self) -> np.ndarray:
        return 2 * self.d_count / self.n


def block_decompose(fields, gamma: float, delta_star: float, start: int = 0) -> BlockDecomposition:
    """Split every block into the equal halves B+, B- and the set D.

    ``fields`` are the +-1 values on sites start, ..., start + len - 1; the
    range must consist of whole blocks.
    """
    n = block_sites(gamma, delta_star)
    h = np.asarray(fields, dtype=np.int8)
    if start % n or len(h) % n:
        raise AlignmentError("interval not aligned with the delta*-grid")
    H = h.reshape(-1, n)
    ap = H > 0
    n_plus = ap.sum(axis=1)
    half = n // 2
    lam = np.sign(n_plus - half).astype(np.int64)
    # A^lambda as a mask; for lambda = ambiguous 0 it is unused
    alam = np.where((lam >= 0)[:, None], ap, ~ap)
    run = np.cumsum(alam, axis=1)
    bl = alam & (run <= half)               # B^lambda: first n/2 sites of A^lambda
    d = alam & (run > half)
    d[lam == 0] = False
    bplus = np.where((lam == 1)[:, None], bl, np.where((lam == -1)[:, None], ~bl, ap))
    # l(x): first offset where the running count of A^lambda reaches n/2
    l_site = np.where(lam != 0, np.argmax(run >= half, axis=1), -1)
    return BlockDecomposition(gamma, delta_star, start // n, lam, l_site, bplus, d, n_plus)


@dataclass
class BlockProfile:
    """Pairs (m1, m2) per block of width ``width`` starting at block ``x0``."""

    width: float
    m1: np.ndarray
    m2: np.ndarray
    x0: int = 0
    lam: np.ndarray | None = None
    d_count: np.ndarray | None = None
    p: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.m1 = np.asarray(self.m1, dtype=float)
        self.m2 = np.asarray(self.m2, dtype=float)
        if self.m1.shape != self.m2.shape:
            raise ValueError("m1 and m2 must have equal shapes")

    def __len__(self):
        return len(self.m1)

    @property
    def m_tilde(self) -> np.ndarray:
        return 0.5 * (self.m1 + self.m2)

    @property
    def left(self) -> float:
        return self.x0 * self.width

    @property
    def right(self) -> float:
        return (self.x0 + len(self)) * self.width

    def T(self) -> "BlockProfile":
        return BlockProfile(self.width, -self.m2, -self.m1, self.x0, self.lam, self.d_count, self.p)

    @classmethod
    def constant(cls, m, n_blocks: int, width: float, x0: int = 0) -> "BlockProfile":
        m1, m2 = (m.m1, m.m2) if hasattr(m, "m1") else m
        return cls(width, np.full(n_blocks, float(m1)), np.full(n_blocks, float(m2)), x0)

    def on_lattice(self, gamma: float) -> bool:
        """Values in {-1, -1 + 4 gamma/delta*, ..., 1}."""
        step = 4 * gamma / self.width
        k1 = (self.m1 + 1) / step
        k2 = (self.m2 + 1) / step
        return bool(np.allclose(k1, np.round(k1), atol=1e-9) and np.allclose(k2, np.round(k2), atol=1e-9)
                    and np.all(np.abs(self.m1) <= 1) and np.all(np.abs(self.m2) <= 1))

    def write_csv(self, path) -> None:
        nb = len(self)
        lam = self.lam if self.lam is not None else np.zeros(nb, int)
        dc = self.d_count if self.d_count is not None else np.zeros(nb, int)
        p = self.p if self.p is not None else np.zeros(nb)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_index", "m1", "m2", "lambda", "d_count", "p"])
            for k in range(nb):
                w.writerow([self.x0 + k, repr(float(self.m1[k])), repr(float(self.m2[k])),
                            int(lam[k]), int(dc[k]), repr(float(p[k]))])


def block_magnetization(c: SpinConfig, d: BlockDecomposition, check: bool = True) -> BlockProfile:
    """Block-spin magnetizations (2 gamma/delta*) sum over B+- of the spins."""
    n = d.n
    if c.start != d.x0 * n or len(c) != d.n_blocks * n:
        raise AlignmentError("configuration does not cover the decomposed interval")
    S = c.spins.reshape(-1, n).astype(np.int64)
    sp = np.where(d.in_bplus, S, 0).sum(axis=1)
    sm = np.where(~d.in_bplus, S, 0).sum(axis=1)
    m1 = 2 * sp / n
    m2 = 2 * sm / n
    if check:
        total = S.sum(axis=1) / n
        if not np.array_equal(total, 0.5 * (m1 + m2)):
            raise AssertionError("total block magnetization identity violated")
        H = c.fields.reshape(-1, n).astype(np.int64)
        fieldterm = (H * S).sum(axis=1) / n
        sd = np.where(d.in_d, S, 0).sum(axis=1)
        if not np.array_equal(fieldterm, 0.5 * (m1 - m2) + d.lam * (2 * sd / n)):
            raise AssertionError("field decomposition identity violated")
    return BlockProfile(d.delta_star, m1, m2, d.x0, d.lam.copy(), d.d_count, d.p)


def delta_average(bp: BlockProfile, delta: float) -> BlockProfile:
    """Average over the blocks of each delta-cell."""
    k = delta / bp.width
    kk = int(round(k))
    if abs(k - kk) > 1e-9 or kk < 1:
        raise ValueError("delta must be an integer multiple of the block width")
    if bp.x0 % kk or len(bp) % kk:
        raise AlignmentError("profile not aligned with the delta-grid")
    return BlockProfile(delta, bp.m1.reshape(-1, kk).mean(axis=1), bp.m2.reshape(-1, kk).mean(axis=1),
                        bp.x0 // kk)


@dataclass
class EtaSequence:
    ell0: int
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def ells(self) -> np.ndarray:
        return self.ell0 + np.arange(len(self.values))

    def at(self, ell: int) -> int:
        return int(self.values[ell - self.ell0])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "eta"])
            for l, e in zip(self.ells, self.values):
                w.writerow([int(l), int(e)])


def _units(bp: BlockProfile) -> int:
    per = 1 / bp.width
    k = int(round(per))
    if abs(per - k) > 1e-9:
        raise ValueError("block width must divide the macro unit")
    if bp.x0 % k or len(bp) % k:
        raise ValueError("eta needs whole unit blocks")
    return k


def _pair(m):
    return (m.m1, m.m2) if hasattr(m, "m1") else tuple(m)


def eta_indicator(bp: BlockProfile, delta: float, zeta: float, m_beta, check: bool = True) -> EtaSequence:
    """+1 / -1 / 0 per unit macro block by delta-averaged l1 closeness to m_beta / T m_beta."""
    per_unit = _units(bp)
    k = int(round(delta / bp.width))
    if abs(delta / bp.width - k) > 1e-9 or per_unit % k:
        raise ValueError("delta must be a multiple of the block width dividing 1")
    a1, a2 = _pair(m_beta)
    dp = np.abs(bp.m1 - a1) + np.abs(bp.m2 - a2)
    dm = np.abs(bp.m1 + a2) + np.abs(bp.m2 + a1)
    cp = dp.reshape(-1, per_unit // k, k).sum(axis=2) * (1 / k)
    cm = dm.reshape(-1, per_unit // k, k).sum(axis=2) * (1 / k)
    tol = zeta + 1e-12 * max(1.0, zeta)
    plus = np.all(cp <= tol, axis=1)
    minus = np.all(cm <= tol, axis=1)
    vals = np.where(plus, 1, np.where(minus, -1, 0)).astype(np.int64)
    eta = EtaSequence(bp.x0 // per_unit, vals)
    if check:
        alt = eta_indicator_integral(bp, delta, zeta, m_beta)
        if not np.array_equal(alt.values, eta.values):
            raise AssertionError("the two eta definitions disagree")
    return eta


def eta_indicator_integral(bp: BlockProfile, delta: float, zeta: float, m_beta) -> EtaSequence:
    """Same indicator through the pointwise form: for every y in [l, l+1) the
    delta-cell integral of ||m - v||_1, sampled at every block start y."""
    per_unit = _units(bp)
    k = int(round(delta / bp.width))
    a1, a2 = _pair(m_beta)
    out = []
    for u in range(len(bp) // per_unit):
        res = 0
        for v, sgn in (((a1, a2), 1), ((-a2, -a1), -1)):
            ok = True
            for j in range(per_unit):
                x = u * per_unit + j
                c0 = (x // k) * k
                integ = sum((abs(bp.m1[z] - v[0]) + abs(bp.m2[z] - v[1])) * bp.width
                            for z in range(c0, c0 + k)) / delta
                if integ > zeta + 1e-12 * max(1.0, zeta):
                    ok = False
                    break
            if ok:
                res = sgn
                break
        out.append(res)
    return EtaSequence(bp.x0 // per_unit, np.array(out, dtype=np.int64))


def detect_single_interface(eta: EtaSequence, R2: float, ell1: int | None = None,
                            ell2: int | None = None) -> float | None:
    """l0 when a single phase change occurs within [l1, l2] on length R2, else None.

    Candidate l0 run over the half-integer grid of (l1 + R2, l2 - R2); the
    returned value is the admissible candidate closest to the centre of the
    transition region (the centre of the zero run when there is one).
    """
    l1 = eta.ell0 if ell1 is None else ell1
    l2 = eta.ell0 + len(eta) - 1 if ell2 is None else ell2
    if 2 * R2 > l2 - l1:
        raise ValueError("need 2 R2 <= l2 - l1")
    e = {l: eta.at(l) for l in range(l1, l2 + 1)}
    s1, s2 = e[l1], e[l2]
    if s1 == 0 or s2 != -s1:
        return None
    adm = []
    c = 2 * (l1 + R2)
    c = math.floor(c) + 1
    while c / 2 < l2 - R2:
        l0 = c / 2
        left = [l for l in e if l <= l0 - R2]
        right = [l for l in e if l >= l0 + R2]
        mid = [l for l in e if l0 - R2 <= l <= l0 + R2 and e[l] == 0]
        if (all(e[l] == s1 for l in left) and all(e[l] == s2 for l in right)
                and (not mid or mid[-1] - mid[0] == len(mid) - 1)):
            adm.append(l0)
        c += 1
    if not adm:
        return None
    a = l1
    while a + 1 <= l2 and e[a + 1] == s1:
        a += 1
    b = l2
    while b - 1 >= l1 and e[b - 1] == s2:
        b -= 1
    centre = 0.5 * (a + b)
    return min(adm, key=lambda z: (abs(z - centre), z))


def neighborhood_membership(bp: BlockProfile, u, gamma: float, delta: float, zeta: float,
                            rho: float, R2: float, m_beta) -> dict:
    """Closeness of a block profile to a step profile u with fuzziness rho.

    Off the jump neighbourhoods each delta-cell average of ||m - u^{gamma,delta*}||_1
    must be <= zeta; on each neighbourhood C_i the eta sequence must show a
    single phase change.  Returns the verdict with per-clause details.
    """
    from .profiles import partition_C_B

    a, b = u.domain
    parts = partition_C_B(u, rho, delta * gamma)
    ds = bp.width
    k = int(round(delta / ds))
    a1, a2 = _pair(m_beta)
    # u^{gamma, delta*} on each block: average of u(gamma s) over the block
    lo = (bp.x0 + np.arange(len(bp))) * ds * gamma
    hi = lo + ds * gamma
    frac_plus = np.array([u.fraction_plus(x, y) for x, y in zip(lo, hi)])
    v1 = frac_plus * a1 + (1 - frac_plus) * (-a2)
    v2 = frac_plus * a2 + (1 - frac_plus) * (-a1)
    dist = np.abs(bp.m1 - v1) + np.abs(bp.m2 - v2)
    if bp.x0 % k or len(bp) % k:
        raise AlignmentError("profile not aligned with the delta-grid")
    cell = dist.reshape(-1, k).mean(axis=1)
    cell_lo = (bp.x0 // k + np.arange(len(cell))) * delta * gamma
    cell_hi = cell_lo + delta * gamma
    in_C = np.zeros(len(cell), bool)
    for (cl, cr) in parts["C"]:
        in_C |= (cell_lo < cr) & (cell_hi > cl)
    covered = (cell_lo >= a) & (cell_hi <= b)
    bad_B = np.flatnonzero(covered & ~in_C & (cell > zeta))
    eta = eta_indicator(bp, delta, zeta, m_beta, check=False)
    inter = []
    for (cl, cr) in parts["C"]:
        l1 = max(math.ceil(cl / gamma - 1e-9), eta.ell0)
        l2 = min(math.floor(cr / gamma + 1e-9) - 1, eta.ell0 + len(eta) - 1)
        if l2 - l1 < 2 * R2:
            inter.append({"C": (cl, cr), "l0": None, "ok": False, "reason": "C too short for 2 R2"})
            continue
        l0 = detect_single_interface(eta, R2, l1, l2)
        inter.append({"C": (cl, cr), "l0": l0, "ok": l0 is not None})
    ok = len(bad_B) == 0 and all(x["ok"] for x in inter)
    return {"member": bool(ok), "bad_B_cells": bad_B.tolist(), "interfaces": inter, "eta": eta}


# ---------------------------------------------------------------------------
# block free energies


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _counts(m, half):
    k = (1 + np.asarray(m)) / 2 * half
    ki = np.round(k)
    if np.any(np.abs(k - ki) > 1e-9):
        raise ValueError("magnetization off the block lattice")
    return ki


def block_free_energy_compare(bp: BlockProfile, gamma: float, delta_star: float, beta: float,
                              theta: float, left: BlockProfile | None = None,
                              right: BlockProfile | None = None) -> dict:
    """Block free energy with binomial entropy against its continuum version.

    ``left``/``right`` hold the boundary unit intervals (1/delta* blocks each);
    missing sides count as zero magnetization.
    """
    n = block_sites(gamma, delta_star)
    half = n // 2
    K = int(round(0.5 / delta_star))
    if abs(0.5 / delta_star - K) > 1e-9:
        raise ValueError("1/(2 delta*) must be an integer")
    nb = len(bp)
    per = 2 * K
    zeros = np.zeros(per)
    lm = left.m_tilde if left is not None else zeros
    rm = right.m_tilde if right is not None else zeros
    if len(lm) != per or len(rm) != per:
        raise ValueError("boundary profiles must span one macro unit each")
    mt = bp.m_tilde
    ext = np.concatenate([lm, mt, rm])
    idx = np.arange(len(ext))
    dx = idx[:, None] - idx[None, :]
    inside = (idx >= per) & (idx < per + nb)
    Jd = delta_star * (np.abs(dx) <= K)                 # J_{delta*}(x - y)
    E_in = -0.5 * delta_star * mt @ Jd[np.ix_(inside, inside)] @ mt
    E_bd = -delta_star * mt @ Jd[np.ix_(inside, ~inside)] @ ext[~inside]
    fterm = -0.5 * theta * delta_star * np.sum(bp.m1 - bp.m2)
    k1, k2 = _counts(bp.m1, half), _counts(bp.m2, half)
    lb = _log_binom(half, k1) + _log_binom(half, k2)
    ent_hat = -(gamma / beta) * np.sum(lb)
    Fhat = E_in + E_bd + fterm + ent_hat
    # continuum functional of the piecewise-constant embedding
    ent_cont = delta_star * np.sum(mf.entropy(bp.m1) + mf.entropy(bp.m2)) / (2 * beta)
    # overlap measure of {|r - s| <= 1/2} on two blocks k apart
    w = np.where(np.abs(dx) < K, delta_star**2, np.where(np.abs(dx) == K, 0.5 * delta_star**2, 0.0))
    diff2 = (ext[:, None] - ext[None, :]) ** 2
    nonloc_in = 0.25 * np.sum((w * diff2)[np.ix_(inside, inside)])
    nonloc_bd = 0.5 * np.sum((w * diff2)[np.ix_(inside, ~inside)])
    f_local = (-(2 * mt) ** 2 / 8 * delta_star).sum() + fterm
    Ftilde = f_local + ent_cont + nonloc_in + nonloc_bd
    corr = 0.5 * delta_star * np.sum(ext[~inside] ** 2 * Jd[np.ix_(~inside, inside)].sum(axis=1))
    I_len = nb * delta_star
    gap = abs(Fhat - Ftilde + corr)
    bound = I_len * gamma / delta_star * math.log(delta_star / gamma)
    stirling = abs(ent_cont - ent_hat)
    return {"Fhat": float(Fhat), "Ftilde": float(Ftilde), "correction": float(corr), "gap": float(gap),
            "bound": float(bound), "ok": bool(gap <= bound), "stirling_gap": float(stirling),
            "stirling_bound": float(bound / beta), "stirling_ok": bool(stirling <= bound / beta)}


# ---------------------------------------------------------------------------
# exact multibody term on tiny volumes

MAX_MULTIBODY_SITES = 24


def _block_states(bplus_mask, k_plus, k_minus):
    """All spin vectors of one block with k_plus (+1)'s on B+ and k_minus on B-."""
    n = len(bplus_mask)
    ip = np.flatnonzero(bplus_mask)
    im = np.flatnonzero(~bplus_mask)
    out = []
    for cp in itertools.combinations(ip, k_plus):
        for cm in itertools.combinations(im, k_minus):
            s = -np.ones(n, np.int64)
            s[list(cp)] = 1
            s[list(cm)] = 1
            out.append(s)
    return np.array(out)


def _multibody_setup(bp, d, beta, theta):
    n = d.n
    nb = d.n_blocks
    if nb * n > MAX_MULTIBODY_SITES or nb > 3 or n > 8:
        raise ValueError("multibody enumeration limited to 3 blocks of <= 8 sites")
    half = n // 2
    per_block = []
    tilts = []
    for x in range(nb):
        kp = int(_counts(bp.m1[x], half))
        km = int(_counts(bp.m2[x], half))
        st = _block_states(d.in_bplus[x], kp, km)
        per_block.append(st)
        tilts.append(2 * beta * theta * d.lam[x] * (st * d.in_d[x]).sum(axis=1))
    return per_block, tilts


def multibody_V_exact(bp: BlockProfile, d: BlockDecomposition, beta: float, theta: float) -> dict:
    """gamma V: the block-pair interaction correction under the tilted canonical measure.

    Pairs are taken once per unordered pair {x, y}, which reproduces the
    microscopic pair energy exactly (the ordered double product counts
    each pair twice).
    """
    gamma, ds = d.gamma, d.delta_star
    n, nb = d.n, d.n_blocks
    per_block, tilts = _multibody_setup(bp, d, beta, theta)
    if nb == 1:
        return {"gammaV": 0.0, "bound": ds * nb * ds, "ok": True, "pair_ok": True, "pair_max": 0.0}
    pos = np.arange(n)
    pair_max = 0.0
    pair_ok = True
    combos = list(itertools.product(*[range(len(s)) for s in per_block]))
    Utot = np.zeros(len(combos))
    tilt = np.zeros(len(combos))
    ci = np.array(combos)
    for x in range(nb):
        tilt += tilts[x][ci[:, x]]
    for x in range(nb):
        for y in range(x + 1, nb):
            dist = np.abs((y * n + pos)[None, :] - (x * n + pos)[:, None])
            Jm = (gamma * dist <= 0.5).astype(float) - float(ds * (y - x) <= 0.5)
            # U for every pair of block states
            Uxy = -gamma * np.einsum("ai,ij,bj->ab", per_block[x], Jm, per_block[y])
            bound = gamma * (ds / gamma) ** 2 * float(0.5 - ds <= ds * (y - x) <= 0.5 + ds)
            pair_max = max(pair_max, float(np.abs(Uxy).max()))
            if np.abs(Uxy).max() > bound + 1e-12:
                pair_ok = False
            Utot += Uxy[ci[:, x], ci[:, y]]
    logZ0 = logsumexp(tilt)
    V = -(1 / beta) * (logsumexp(tilt - beta * Utot) - logZ0)
    I_len = nb * ds
    gV = gamma * V
    return {"gammaV": float(gV), "V": float(V), "bound": I_len * ds, "ok": bool(abs(gV) <= I_len * ds + 1e-15),
            "pair_ok": pair_ok, "pair_max": pair_max}


def multibody_V_grouped(bp: BlockProfile, d: BlockDecomposition, beta: float, theta: float) -> float:
    """gamma V through the total-energy grouping: microscopic pair energy minus
    its block-constant approximation, enumerated over all 2^N spins."""
    gamma, ds = d.gamma, d.delta_star
    n, nb = d.n, d.n_blocks
    N = n * nb
    if N > 16:
        raise ValueError("raw enumeration limited to 16 sites")
    idx = np.arange(2**N, dtype=np.int64)
    S = (2 * ((idx[:, None] >> np.arange(N)) & 1) - 1).astype(np.int64)
    Sb = S.reshape(-1, nb, n)
    half = n // 2
    keep = np.ones(len(S), bool)
    for x in range(nb):
        kp = (Sb[:, x, :][:, d.in_bplus[x]] > 0).sum(axis=1)
        km = (Sb[:, x, :][:, ~d.in_bplus[x]] > 0).sum(axis=1)
        keep &= (kp == _counts(bp.m1[x], half)) & (km == _counts(bp.m2[x], half))
    S = S[keep]
    Sb = Sb[keep]
    sites = np.arange(N)
    A = (gamma * np.abs(sites[:, None] - sites[None, :]) <= 0.5).astype(float)
    Hpair = -0.5 * gamma * np.einsum("si,ij,sj->s", S, A, S)
    tot = Sb.sum(axis=2) / n                     # block m-tilde
    xb = np.arange(nb)
    Jd = ds * (ds * np.abs(xb[:, None] - xb[None, :]) <= 0.5)
    E = -0.5 * ds * np.einsum("sx,xy,sy->s", tot, Jd, tot)
    tilt = np.zeros(len(S))
    for x in range(nb):
        tilt += 2 * beta * theta * d.lam[x] * (Sb[:, x, :] * d.in_d[x]).sum(axis=1)
    V = -(1 / beta) * (logsumexp(tilt - beta * (Hpair - E / gamma)) - logsumexp(tilt))
    return float(gamma * V)
