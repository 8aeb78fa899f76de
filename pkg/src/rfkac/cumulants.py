"""Random energy differences X(x), their aggregates chi(alpha) and the walks
built from them.

Inside a block only the magnetisation of the half B^{-lambda} matters, so the
block-level cumulant generating function is a one-dimensional hypergeometric
sum.  Everything below works from a table X[d], d = |D(x)|, for lambda = +1;
lambda = -1 is the exact mirror image.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln, logsumexp

from . import mean_field as mf
from .coarse_grain import BlockDecomposition
from .params import Verdict, _c_t
from .renewal import WalkPath

__all__ = [
    "BlockCumulantInput", "cumulant_G_exact", "lattice_m_beta", "XDecomposition",
    "X_decomposition", "XTable", "xi_bound_scan", "ChiSeries", "chi_from_blocks",
    "chi_aggregate", "walk_Y", "walk_W_hat", "increment_walk", "moment_and_mgf_check",
    "donsker_and_chi0_check", "InsufficientData", "PROVENANCES",
]

PROVENANCES = ("exact-G", "gaussian-approx", "synthetic-gaussian")


class InsufficientData(ValueError):
    pass


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


@dataclass(frozen=True)
class BlockCumulantInput:
    """One half-block of ``n_half`` spins at fixed magnetisation ``m``, of
    which ``d`` feel the extra tilt 2 beta theta lambda."""

    n_half: int
    d: int
    lam: int
    m: float
    beta: float
    theta: float

    def __post_init__(self):
        if self.n_half < 1:
            raise ValueError("n_half must be positive")
        if not 0 <= self.d <= self.n_half:
            raise ValueError("need 0 <= d <= n_half")
        if self.lam not in (-1, 0, 1):
            raise ValueError("lambda must be -1, 0 or +1")
        if not -1 <= self.m <= 1:
            raise ValueError("magnetisation outside [-1, 1]")
        k = (1 + self.m) * self.n_half / 2
        if abs(k - round(k)) > 1e-9:
            raise ValueError("magnetisation not on the block lattice")

    @property
    def K(self) -> int:
        """Number of +1 spins."""
        return int(round((1 + self.m) * self.n_half / 2))

    @property
    def tilt(self) -> float:
        return 2 * self.beta * self.theta * self.lam


def _k_range(n, d, K):
    lo, hi = max(0, K - (n - d)), min(d, K)
    if lo > hi:
        raise ValueError(f"infeasible block: d={d}, K={K}, n_half={n}")
    return np.arange(lo, hi + 1)


def cumulant_G_exact(inp: BlockCumulantInput) -> float:
    """-(1/beta) log E[exp(tilt * sum_D sigma)] under the uniform law on
    configurations of the half-block with the prescribed magnetisation."""
    n, d, K = inp.n_half, inp.d, inp.K
    k = _k_range(n, d, K)
    t = inp.tilt
    if d == 0 or t == 0:
        return 0.0
    logw = _log_comb(d, k) + _log_comb(n - d, K - k) + t * (2 * k - d)
    return -(logsumexp(logw) - _log_comb(n, K)) / inp.beta


def _log_binom_pmf_sum(n, d, K, a_d, a_r):
    """log P[sum sigma = 2K - n] when d spins have field a_d and n-d have a_r."""
    k = _k_range(n, d, K)
    q_d = np.log1p(np.tanh(a_d)) - math.log(2)
    p_d = np.log1p(-np.tanh(a_d)) - math.log(2)
    q_r = np.log1p(np.tanh(a_r)) - math.log(2)
    p_r = np.log1p(-np.tanh(a_r)) - math.log(2)
    w = (_log_comb(d, k) + k * q_d + (d - k) * p_d
         + _log_comb(n - d, K - k) + (K - k) * q_r + (n - d - K + k) * p_r)
    return float(logsumexp(w))


def _saddle_split(n, d, K, t):
    """Split log E exp(t S_D) into a smooth extensive part and the
    log ratio of the two local probabilities.

    With a chosen so that the tilted product law has mean magnetisation
    2K - n, the identity

        log E = d log cosh(t+a) + (n-d) log cosh a - aM - n log cosh a0 + a0 M
                + log P_{t,a}[sum = M] - log P_{a0}[sum = M]

    holds exactly (tanh a0 = m).  Returns (smooth part, log-ratio).
    """
    M = 2 * K - n
    m = M / n
    a0 = math.atanh(m)

    def mean_gap(a):
        return d * math.tanh(a + t) + (n - d) * math.tanh(a) - M

    lo, hi = a0 - abs(t) - 1.0, a0 + abs(t) + 1.0
    a = optimize.brentq(mean_gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    lc = lambda x: abs(x) + math.log1p(math.exp(-2 * abs(x))) - math.log(2)
    smooth = d * lc(t + a) + (n - d) * lc(a) - a * M - n * lc(a0) + a0 * M
    ratio = _log_binom_pmf_sum(n, d, K, t + a, a) - _log_binom_pmf_sum(n, d, K, a0, a0)
    return smooth, ratio


def lattice_m_beta(mb: mf.MagnetizationPair, n_half: int) -> tuple[float, float]:
    """Nearest point of the block lattice {-1 + 2K/n_half} to each component."""
    def snap(x):
        return -1 + 2 * round((1 + x) * n_half / 2) / n_half
    return snap(mb.m1), snap(mb.m2)


@dataclass
class XDecomposition:
    lam: int
    d: int
    n_half: int
    X: float
    leading: float          # -lambda d L / beta
    leading_unscaled: float  # -lambda d L
    xi1: float
    xi2: float
    identity_residual: float
    p: float
    in_window: bool
    verdicts: list = field(default_factory=list)


def _window_ok(m_abs, n_half, p, beta, theta):
    g0 = n_half ** 0.25
    return m_abs <= 1 - max(g0 / n_half, 16 * p * beta * theta / (1 - math.tanh(2 * beta * theta)))


def xi_bounds(beta, theta, n_half, m1):
    """The two residual bounds with g0(n) = n^{1/4}."""
    bt = beta * theta
    r = (1 / n_half) ** 0.25
    b1 = 64 * bt * (1 + bt) / ((1 - m1) ** 2 * (1 - math.tanh(2 * bt))) * r
    b2 = r * (36 + 2 * _c_t(bt))
    return b1, b2


def X_decomposition(lam: int, d: int, n_half: int, m_lat, beta: float, theta: float) -> XDecomposition:
    """X = G(m_beta image) - G(T m_beta image) with its Gaussian-regime split.

    The residuals are defined through

        beta X = -lambda d [L + xi1] - lambda xi2,

    xi1 collecting the per-site smooth correction and xi2 the log ratio of
    local probabilities; the identity holds to rounding.
    """
    m1, m2 = m_lat
    p = d / n_half
    t = math.tanh(2 * beta * theta)
    L = math.log((1 + m2 * t) / (1 - m1 * t))
    if lam == 0 or d == 0:
        return XDecomposition(lam, d, n_half, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, p,
                              True, [])
    # G_a uses component (3+lambda)/2 of m_beta, G_b that of T m_beta
    ma, mbb = (m2, -m1) if lam == 1 else (m1, -m2)
    Ga = cumulant_G_exact(BlockCumulantInput(n_half, d, lam, ma, beta, theta))
    Gb = cumulant_G_exact(BlockCumulantInput(n_half, d, lam, mbb, beta, theta))
    X = Ga - Gb
    tilt = 2 * beta * theta * lam
    parts = []
    for m in (ma, mbb):
        K = int(round((1 + m) * n_half / 2))
        if abs(m) == 1:
            parts.append((float("nan"), float("nan")))
            continue
        smooth, ratio = _saddle_split(n_half, d, K, tilt)
        phi = smooth / d - math.log(math.cosh(tilt)) - math.log1p(m * math.tanh(tilt))
        parts.append((phi, ratio))
    xi1 = lam * (parts[0][0] - parts[1][0])
    xi2 = lam * (parts[0][1] - parts[1][1])
    recon = (-lam * d * (L + xi1) - lam * xi2) / beta
    in_win = (p <= (1 / n_half) ** 0.25
              and _window_ok(max(abs(ma), abs(mbb)), n_half, p, beta, theta))
    b1, b2 = xi_bounds(beta, theta, n_half, m1)
    verdicts = [
        Verdict("xi1", bool(abs(xi1) <= b1), abs(xi1), b1, b1 - abs(xi1), not in_win),
        Verdict("xi2", bool(abs(xi2) <= b2), abs(xi2), b2, b2 - abs(xi2), not in_win),
    ]
    return XDecomposition(lam, d, n_half, X, -lam * d * L / beta, -lam * d * L, xi1, xi2,
                          X - recon, p, in_win, verdicts)


def xi_bound_scan(beta: float, theta: float, n_half: int, mb: mf.MagnetizationPair | None = None) -> dict:
    """Residual bounds over every d with p below the cutoff.

    Reports separately the blocks inside the Gaussian window and all
    blocks below the cutoff (informational).
    """
    mb = mb or mf.equilibrium_magnetization(beta, theta)
    m_lat = lattice_m_beta(mb, n_half)
    dmax = int(math.floor(n_half * (1 / n_half) ** 0.25))
    rows = [X_decomposition(1, d, n_half, m_lat, beta, theta) for d in range(1, dmax + 1)]
    b1, b2 = xi_bounds(beta, theta, n_half, m_lat[0])
    win = [r for r in rows if r.in_window]

    def summary(rs):
        if not rs:
            return {"n": 0, "max_xi1": None, "max_xi2": None, "ok": True}
        x1 = max(abs(r.xi1) for r in rs)
        x2 = max(abs(r.xi2) for r in rs)
        return {"n": len(rs), "max_xi1": x1, "max_xi2": x2, "ok": bool(x1 <= b1 and x2 <= b2)}

    return {
        "n_half": n_half, "m_lattice": m_lat, "bound_xi1": b1, "bound_xi2": b2,
        "window": summary(win), "below_cutoff": summary(rows),
        "max_identity_residual": max((abs(r.identity_residual) for r in rows), default=0.0),
    }


class XTable:
    """X[d] for lambda = +1 and d = 0..n_half, plus the law of (lambda, d)
    under iid symmetric fields."""

    def __init__(self, beta: float, theta: float, gamma: float, delta_star: float,
                 mb: mf.MagnetizationPair | None = None):
        n = delta_star / gamma
        if abs(n - round(n)) > 1e-9 or round(n) % 2:
            raise ValueError("delta*/gamma must be an even integer")
        self.beta, self.theta, self.gamma, self.delta_star = beta, theta, gamma, delta_star
        self.n_half = int(round(n)) // 2
        self.mb = mb or mf.equilibrium_magnetization(beta, theta)
        self.m_lat = lattice_m_beta(self.mb, self.n_half)
        self.cut = (2 * gamma / delta_star) ** 0.25
        nh = self.n_half
        m1, m2 = self.m_lat
        X = np.zeros(nh + 1)
        for d in range(1, nh + 1):
            ga = cumulant_G_exact(BlockCumulantInput(nh, d, 1, m2, beta, theta)) if _feasible(nh, d, m2) else np.nan
            gb = cumulant_G_exact(BlockCumulantInput(nh, d, 1, -m1, beta, theta)) if _feasible(nh, d, -m1) else np.nan
            X[d] = ga - gb
        self.X = X
        self.keep = np.arange(nh + 1) / nh <= self.cut + 1e-15
        # n_plus ~ Bin(2 nh, 1/2); d = |n_plus - nh|
        dd = np.arange(nh + 1)
        pm = stats.binom.pmf(nh + dd, 2 * nh, 0.5)
        self.prob_d = np.where(dd == 0, pm, 2 * pm)   # both signs of lambda
        self.cutX = np.where(self.keep, np.nan_to_num(X), 0.0)

    def value(self, lam, d):
        lam = np.asarray(lam)
        return lam * self.cutX[np.asarray(d)]

    def second_moment(self) -> float:
        """E[X^2 1{p <= cutoff}], exact over the (lambda, d) law."""
        return float(np.sum(self.prob_d * self.cutX**2))

    def c_exact(self) -> float:
        """c(beta, theta, gamma/delta*) = (gamma/delta*) E[X^2 1{...}]."""
        return self.gamma / self.delta_star * self.second_moment()

    def bracket(self, V: float) -> tuple[float, float]:
        r = (self.gamma / self.delta_star) ** 0.2
        return V * V * (1 - r) ** 2, V * V * (1 + r) ** 2

    def signed_law(self):
        """Values and probabilities of lambda X[d] indexed by n_plus - n_half."""
        nh = self.n_half
        j = np.arange(-nh, nh + 1)
        vals = np.sign(j) * self.cutX[np.abs(j)]
        probs = stats.binom.pmf(nh + j, 2 * nh, 0.5)
        return vals, probs / probs.sum()

    def sample_blocks(self, shape, rng):
        nplus = rng.binomial(2 * self.n_half, 0.5, size=shape)
        lam = np.sign(nplus - self.n_half)
        d = np.abs(nplus - self.n_half)
        return lam, d


def _feasible(n, d, m):
    K = int(round((1 + m) * n / 2))
    return max(0, K - (n - d)) <= min(d, K)


@dataclass
class ChiSeries:
    eps: float
    alpha0: int
    values: np.ndarray
    provenance: str = "exact-G"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("chi values must be 1-d")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("chi values must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def alphas(self) -> np.ndarray:
        return np.arange(self.alpha0, self.alpha0 + len(self.values))

    def at(self, alpha: int) -> float:
        i = alpha - self.alpha0
        if not 0 <= i < len(self.values):
            raise IndexError(f"alpha={alpha} outside the window")
        return float(self.values[i])

    def negated(self) -> "ChiSeries":
        return ChiSeries(self.eps, self.alpha0, -self.values, self.provenance, dict(self.meta))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "chi"])
            for a, v in zip(self.alphas, self.values):
                w.writerow([int(a), repr(float(v))])


def _blocks_per_cell(eps, gamma, delta_star):
    r = eps / (gamma * delta_star)
    if r < 1 - 1e-9 or abs(r - round(r)) > 1e-6 * max(1.0, r):
        raise ValueError("eps/(gamma delta*) must be a positive integer")
    return int(round(r))


def chi_from_blocks(decomp: BlockDecomposition, table: XTable, eps: float) -> ChiSeries:
    """chi(alpha) from a field realisation already split into blocks.

    The decomposition must start and end on cells of length eps/gamma.
    """
    M = _blocks_per_cell(eps, table.gamma, table.delta_star)
    if decomp.x0 % M or decomp.n_blocks % M:
        raise ValueError("block range not aligned with the eps-cells")
    d = decomp.in_d.sum(axis=1)
    x = table.gamma * table.value(decomp.lam, d)
    vals = x.reshape(-1, M).sum(axis=1)
    return ChiSeries(eps, decomp.x0 // M, vals, "exact-G", {"blocks_per_cell": M})


def chi_aggregate(table: XTable, eps: float, n_cells: int, rng, mode: str = "exact-G",
                  alpha0: int = 0, V: float | None = None, chunk: int = 1 << 22) -> ChiSeries:
    """Sample chi on n_cells consecutive cells starting at alpha0.

    exact-G draws every block's (lambda, d) and adds the tabulated X;
    gaussian-approx draws one normal per cell with the exact variance;
    synthetic-gaussian uses iid N(0, eps V^2).
    """
    M = _blocks_per_cell(eps, table.gamma, table.delta_star)
    if mode == "exact-G":
        out = np.empty(n_cells)
        vals, probs = table.signed_law()
        if M > len(vals):
            # counts of each (lambda, d) value in a cell: same law, less work
            per = max(1, chunk // len(vals))
            for s in range(0, n_cells, per):
                k = min(per, n_cells - s)
                cnt = rng.multinomial(M, probs, size=k)
                out[s:s + k] = table.gamma * (cnt @ vals)
        else:
            per = max(1, chunk // M)
            for s in range(0, n_cells, per):
                k = min(per, n_cells - s)
                lam, d = table.sample_blocks((k, M), rng)
                out[s:s + k] = table.gamma * table.value(lam, d).sum(axis=1)
    elif mode == "gaussian-approx":
        sd = math.sqrt(M * table.gamma**2 * table.second_moment())
        out = rng.normal(0.0, sd, n_cells)
    elif mode == "synthetic-gaussian":
        if V is None:
            raise ValueError("synthetic mode needs V")
        out = rng.normal(0.0, math.sqrt(eps) * V, n_cells)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ChiSeries(eps, alpha0, out, mode, {"blocks_per_cell": M})


def walk_Y(chi: ChiSeries, alphas) -> np.ndarray:
    """The three-branch walk: cumulative from 0 on the right, Y(0) = 0, and
    minus the sum over the open range (alpha, -1) on the left.

    At alpha = -1 the left branch is an empty sum, so Y(-1) = 0 as well.
    """
    out = []
    for a in np.atleast_1d(alphas):
        a = int(a)
        if a >= 1:
            out.append(sum(chi.at(b) for b in range(0, a + 1)))
        elif a >= -1:
            out.append(0.0)
        else:
            out.append(-sum(chi.at(b) for b in range(a + 1, -1)))
    return np.asarray(out)


def walk_W_hat(chi: ChiSeries, t, c: float) -> np.ndarray:
    """Rescaled continuous-time walk; flat on [-eps, eps]."""
    eps = chi.eps
    s = 1 / math.sqrt(c)
    vals = chi.values
    # prefix sums on both sides of 0 for vectorised evaluation
    i0 = -chi.alpha0
    right = np.concatenate([[0.0], np.cumsum(vals[i0 + 1:])])        # sum_{1..k}
    left = np.concatenate([[0.0], np.cumsum(vals[:i0][::-1])])       # sum_{-k..-1}
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.floor(np.abs(t) / eps + 1e-12).astype(np.int64)
    out = np.zeros_like(t)
    r = t > eps
    lft = t < -eps
    if np.any(k[r] >= len(right)) or np.any(k[lft] >= len(left)):
        raise IndexError("t outside the chi window")
    out[r] = s * right[k[r]]
    out[lft] = s * left[k[lft]]
    return out


def increment_walk(chi: ChiSeries, scale: float = 1.0) -> WalkPath:
    """Walk with Y(0) = 0 and Y(a) - Y(a-1) = chi(a) on the whole window."""
    v = chi.values * scale
    i0 = -chi.alpha0
    if not 0 <= i0 < len(v):
        raise ValueError("window must contain alpha = 0")
    cs = np.concatenate([[0.0], np.cumsum(v)])   # cs[j] = sum of v[:j]
    y = cs[1:] - cs[i0 + 1]
    y[i0] = 0.0
    return WalkPath(chi.eps, y, i0, "chi-walk")


def moment_and_mgf_check(samples, eps: float, V: float, gamma_over_delta: float,
                         lambdas=(-4, -2, -1, 1, 2, 4)) -> dict:
    """Moment and exponential bounds on iid chi samples."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 10_000:
        raise InsufficientData("need at least 1e4 chi samples")
    # antithetic pairing: every sample is matched by its mirror image
    pairs = np.stack([x, -x], axis=1)
    anti_mean = float(np.sum(pairs.sum(axis=1)) / (2 * len(x)))
    sq = x * x / eps
    m2, se2 = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(len(x)))
    r = gamma_over_delta ** 0.2
    lo, hi = V * V * (1 - r) ** 2, V * V * (1 + r) ** 2
    in_bracket = bool(m2 + 3 * se2 >= lo and m2 - 3 * se2 <= hi)
    mgf = []
    for lam in lambdas:
        lm = lam / math.sqrt(eps)
        e = np.exp(lm * x)
        est, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(len(x)))
        bound = math.exp(0.75 * lm * lm * eps * V * V)
        mgf.append({"lambda_sqrt_eps": lam, "mgf": est, "se": se, "bound": bound,
                    "ok": bool(est - 3 * se <= bound)})
    pooled = pairs.ravel()
    ks = stats.ks_2samp(pooled, -pooled)
    return {
        "n": len(x), "antithetic_mean": anti_mean, "second_moment_over_eps": m2,
        "se": se2, "bracket": [lo, hi], "in_bracket": in_bracket,
        "ratio_to_V2": m2 / (V * V), "mgf": mgf, "mgf_ok": all(m["ok"] for m in mgf),
        "symmetry_ks": float(ks.statistic),
        "raw_symmetry_ks": float(stats.ks_2samp(x, -x).statistic),
    }


def donsker_and_chi0_check(tables, eps_list, n_paths: int, V: float, seed: int = 0,
                           t_grid=(-1.0, -0.5, -0.25, 0.25, 0.5, 1.0),
                           c_rel=(0.25, 0.5, 1.0), calib: int = 20_000) -> list[dict]:
    """Per scale: KS of W_hat(1) against N(0,1), Var(W_hat(t))/|t| and the
    frequency of small |chi(0)|.

    ``tables`` is a sequence of XTable for decreasing gamma with matching
    ``eps_list``.  The normalisation c comes from a calibration run; tail
    thresholds are c_rel * sqrt(eps) * V.
    """
    out = []
    ss = np.random.SeedSequence(seed)
    for table, eps, child in zip(tables, eps_list, ss.spawn(len(tables))):
        rng = np.random.default_rng(child)
        cal = chi_aggregate(table, eps, calib, rng).values
        c = float(np.mean(cal**2) / eps)
        K = int(math.floor(max(abs(t) for t in t_grid) / eps + 1e-12))
        W = {t: np.empty(n_paths) for t in t_grid}
        chi0 = np.empty(n_paths)
        per = max(1, (1 << 20) // (2 * K + 1))
        for s0 in range(0, n_paths, per):
            k = min(per, n_paths - s0)
            block = chi_aggregate(table, eps, k * (2 * K + 1), rng).values.reshape(k, 2 * K + 1)
            for i in range(k):
                ch = ChiSeries(eps, -K, block[i], "exact-G")
                for t, v in zip(t_grid, walk_W_hat(ch, np.asarray(t_grid), c)):
                    W[t][s0 + i] = v
                chi0[s0 + i] = block[i, K]
        ks = stats.kstest(W[1.0] if 1.0 in W else W[t_grid[-1]], "norm")
        var_ratio = {str(t): float(np.var(W[t], ddof=1) / abs(t)) for t in t_grid}
        tail = []
        for cc in (r * math.sqrt(eps) * V for r in c_rel):
            f = float(np.mean(np.abs(chi0) >= cc))
            se = math.sqrt(max(f * (1 - f), 1 / n_paths) / n_paths)
            b = 2 * math.exp(-cc * cc / (3 * eps * V * V))
            tail.append({"c": cc, "freq": f, "bound": b, "ok": bool(f - 3 * se <= b)})
        out.append({
            "gamma": table.gamma, "delta_star": table.delta_star, "eps": eps, "c_empirical": c,
            "c_exact": table.c_exact(), "ks_stat": float(ks.statistic), "ks_p": float(ks.pvalue),
            "var_ratio": var_ratio, "p_chi0_zero": float(np.mean(chi0 == 0)),
            "p_chi0_small": float(np.mean(np.abs(chi0) < 1e-6)), "tail": tail,
        })
    return out


def report_json(obj, path=None) -> str:
    s = json.dumps(obj, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else float(o), indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(s)
    return s
