"""Random-field Curie-Weiss thermodynamics and the surface-tension instanton.

The local free energy of a pair of sublattice magnetizations is

    f(m1, m2) = -(m1 + m2)^2 / 8 - theta/2 (m1 - m2) + (I(m1) + I(m2)) / (2 beta)

with I the binary entropy.  ``m1`` lives on the sites with field +1 and
``m2`` on the sites with field -1.  The map T(m1, m2) = (-m2, -m1) exchanges
the two equilibrium phases.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import xlogy

__all__ = [
    "MagnetizationPair",
    "ContinuumProfile",
    "InstantonResult",
    "ConvergenceError",
    "entropy",
    "free_energy",
    "free_energy_grad",
    "theta_c",
    "stationary_points",
    "in_region_E",
    "equilibrium_magnetization",
    "grid_minimizer",
    "kappa_estimate",
    "hessian_kappa_bound",
    "excess_functional",
    "excess_functional_grad",
    "instanton",
    "field_strength_V",
    "surface_tension",
    "write_instanton_csv",
    "summary_json",
]


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver stalls; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class MagnetizationPair:
    m1: float
    m2: float

    def __post_init__(self):
        if abs(self.m1) > 1 or abs(self.m2) > 1:
            raise ValueError(f"magnetization out of [-1, 1]: {self.m1}, {self.m2}")

    @property
    def m_tilde(self) -> float:
        return 0.5 * (self.m1 + self.m2)

    def T(self) -> "MagnetizationPair":
        return MagnetizationPair(-self.m2, -self.m1)

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2])

    def l1(self, other: "MagnetizationPair") -> float:
        return abs(self.m1 - other.m1) + abs(self.m2 - other.m2)


def entropy(m):
    """I(m) with 0 log 0 = 0; raises outside [-1, 1]."""
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) > 1):
        raise ValueError("entropy: |m| > 1")
    p = 0.5 * (1 + m)
    q = 0.5 * (1 - m)
    return xlogy(p, p) + xlogy(q, q)


def free_energy(m1, m2, beta: float, theta: float):
    """Vectorised f_{beta,theta}(m1, m2).

    Summation is arranged so that f(T m) == f(m) bit-for-bit: every term is
    a symmetric function of (m1, -m2).
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    s = m1 + m2
    d = m1 - m2
    ent = entropy(m1) + entropy(m2)
    if np.ndim(ent) == 0:
        # I is even, so I(m1) + I(m2) vs I(-m2) + I(-m1) only differs by order
        e1, e2 = float(entropy(m1)), float(entropy(m2))
        ent = min(e1, e2) + max(e1, e2)
    else:
        e1, e2 = entropy(m1), entropy(m2)
        ent = np.minimum(e1, e2) + np.maximum(e1, e2)
    return -(s * s) / 8.0 - 0.5 * theta * d + ent / (2.0 * beta)


def free_energy_grad(m1, m2, beta: float, theta: float):
    """(df/dm1, df/dm2); arctanh is the derivative of I."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    s = 0.25 * (m1 + m2)
    g1 = -s - 0.5 * theta + np.arctanh(m1) / (2.0 * beta)
    g2 = -s + 0.5 * theta + np.arctanh(m2) / (2.0 * beta)
    return g1, g2


def theta_c(beta: float) -> float:
    if beta <= 1:
        raise ValueError("theta_c needs beta > 1")
    return math.atanh(math.sqrt(1.0 - 1.0 / beta)) / beta


def _phi(mt, beta, theta):
    # stationarity of f reduces to one equation in m_tilde
    return mt - 0.5 * (np.tanh(beta * (mt + theta)) + np.tanh(beta * (mt - theta)))


def stationary_points(beta: float, theta: float, n_grid: int = 200001) -> list[MagnetizationPair]:
    """All solutions of df = 0, located by sign changes of the reduced equation."""
    from scipy.optimize import brentq

    x = np.linspace(-1.0, 1.0, n_grid)
    y = _phi(x, beta, theta)
    roots = []
    for k in np.flatnonzero(y == 0):
        roots.append(float(x[k]))
    sgn = np.sign(y)
    idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    for k in idx:
        roots.append(brentq(_phi, x[k], x[k + 1], args=(beta, theta), xtol=1e-15, rtol=1e-15))
    roots = sorted(set(round(r, 13) for r in roots))
    return [
        MagnetizationPair(math.tanh(beta * (r + theta)), math.tanh(beta * (r - theta)))
        for r in roots
    ]


def in_region_E(beta: float, theta: float) -> bool:
    if beta <= 1 or theta <= 0:
        return False
    tc = theta_c(beta)
    if beta < 1.5:
        if not theta < tc:
            return False
    elif not theta <= tc:
        return False
    return len(stationary_points(beta, theta)) == 3


def equilibrium_magnetization(beta: float, theta: float, tol: float = 1e-12,
                              max_iter: int = 10_000, damping: float = 0.5) -> MagnetizationPair:
    """m_beta: the minimiser with positive total magnetization.

    Damped fixed-point iteration of m1 = tanh(beta(mt + theta)),
    m2 = tanh(beta(mt - theta)) started from (1, 1).
    """
    if not in_region_E(beta, theta) and theta != 0:
        raise ValueError(f"(beta, theta) = ({beta}, {theta}) is outside the two-phase region")
    m1, m2 = 1.0, 1.0
    for _ in range(max_iter):
        mt = 0.5 * (m1 + m2)
        t1 = math.tanh(beta * (mt + theta))
        t2 = math.tanh(beta * (mt - theta))
        res = max(abs(t1 - m1), abs(t2 - m2))
        if res < tol:
            return MagnetizationPair(t1, t2)
        m1 = damping * m1 + (1 - damping) * t1
        m2 = damping * m2 + (1 - damping) * t2
    raise ConvergenceError("fixed point not reached", last=(m1, m2))


def grid_minimizer(beta: float, theta: float, res: float = 1e-4, polish: bool = False):
    """Brute-force argmin of f over [-1,1]^2 restricted to m1 + m2 > 0.

    The grid is scanned in strips so memory stays bounded at res = 1e-4.
    """
    n = int(round(2.0 / res)) + 1
    xs = np.linspace(-1.0, 1.0, n)
    best = (np.inf, 0.0, 0.0)
    step = 2000
    for start in range(0, n, step):
        a = xs[start:start + step, None]
        vals = free_energy(np.broadcast_to(a, (a.shape[0], n)), xs[None, :], beta, theta)
        vals = np.where(a + xs[None, :] > 0, vals, np.inf)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] < best[0]:
            best = (float(vals[k]), float(xs[start + k[0]]), float(xs[k[1]]))
    if polish:
        from scipy.optimize import minimize

        def obj(v):
            if abs(v[0]) > 1 or abs(v[1]) > 1:
                return math.inf
            return float(free_energy(v[0], v[1], beta, theta))

        r = minimize(obj,
                     x0=[best[1], best[2]], method="Nelder-Mead",
                     options={"xatol": 1e-13, "fatol": 1e-16, "maxiter": 5000})
        return MagnetizationPair(*np.clip(r.x, -1, 1))
    return MagnetizationPair(best[1], best[2])


def kappa_estimate(beta: float, theta: float, grid_res: float = 0.005):
    """Largest kappa with f(m) - f(m_beta) >= kappa min(|m - m_beta|_1, |m - T m_beta|_1)^2.

    Returns (kappa, argmin point).  Points within one cell of either minimum
    are dropped to avoid 0/0.
    """
    mb = equilibrium_magnetization(beta, theta)
    tm = mb.T()
    fb = float(free_energy(mb.m1, mb.m2, beta, theta))
    n = int(round(2.0 / grid_res)) + 1
    xs = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    diff = free_energy(X, Y, beta, theta) - fb
    d1 = np.abs(X - mb.m1) + np.abs(Y - mb.m2)
    d2 = np.abs(X - tm.m1) + np.abs(Y - tm.m2)
    near = (np.maximum(np.abs(X - mb.m1), np.abs(Y - mb.m2)) <= grid_res) | (
        np.maximum(np.abs(X - tm.m1), np.abs(Y - tm.m2)) <= grid_res)
    ratio = diff / np.minimum(d1, d2) ** 2
    ratio[near] = np.inf
    k = np.unravel_index(np.argmin(ratio), ratio.shape)
    return float(ratio[k]), MagnetizationPair(float(X[k]), float(Y[k]))


def hessian_kappa_bound(beta: float, theta: float, h: float = 1e-5, n_dir: int = 3601) -> float:
    """min over directions v of (v^T H v / 2) / |v|_1^2 at m_beta (finite-difference H)."""
    mb = equilibrium_magnetization(beta, theta)
    f = lambda a, b: float(free_energy(a, b, beta, theta))
    x, y = mb.m1, mb.m2
    hxx = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / h**2
    hyy = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / h**2
    hxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h**2)
    ang = np.linspace(0, np.pi, n_dir)
    vx, vy = np.cos(ang), np.sin(ang)
    q = 0.5 * (hxx * vx**2 + 2 * hxy * vx * vy + hyy * vy**2)
    return float(np.min(q / (np.abs(vx) + np.abs(vy)) ** 2))


# ---------------------------------------------------------------------------
# nonlocal excess functional on a grid

BOUNDARY_POLICIES = ("clamped", "free")


@dataclass
class ContinuumProfile:
    """Values of (m1, m2) on the grid r_k = -L + k dr, k = 0..2L/dr."""

    dr: float
    m1: np.ndarray
    m2: np.ndarray
    boundary: str = "clamped"

    def __post_init__(self):
        self.m1 = np.asarray(self.m1, dtype=float)
        self.m2 = np.asarray(self.m2, dtype=float)
        if self.m1.shape != self.m2.shape or self.m1.ndim != 1:
            raise ValueError("m1 and m2 must be 1-d arrays of equal length")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ValueError(f"boundary policy must be one of {BOUNDARY_POLICIES}")
        if np.any(np.abs(self.m1) > 1) or np.any(np.abs(self.m2) > 1):
            raise ValueError("profile values out of [-1, 1]")

    @property
    def L(self) -> float:
        return 0.5 * (len(self.m1) - 1) * self.dr

    @property
    def r(self) -> np.ndarray:
        return -self.L + self.dr * np.arange(len(self.m1))

    @property
    def m_tilde(self) -> np.ndarray:
        return 0.5 * (self.m1 + self.m2)

    def T(self) -> "ContinuumProfile":
        """Pointwise T; with clamped ends the reflected profile r -> -r keeps the boundary data."""
        return ContinuumProfile(self.dr, -self.m2.copy(), -self.m1.copy(), self.boundary)

    def reflect_T(self) -> "ContinuumProfile":
        return ContinuumProfile(self.dr, -self.m2[::-1].copy(), -self.m1[::-1].copy(), self.boundary)

    @classmethod
    def constant(cls, m: MagnetizationPair, L: float, dr: float, boundary="free"):
        n = int(round(2 * L / dr)) + 1
        return cls(dr, np.full(n, m.m1), np.full(n, m.m2), boundary)


def _half_width(dr: float) -> int:
    K = 0.5 / dr
    Ki = int(round(K))
    if abs(K - Ki) > 1e-9:
        raise ValueError("grid spacing must divide the interaction half-width 1/2")
    if Ki < 4:
        raise ValueError("grid coarser than 1/8 of the kernel half-width")
    return Ki


def _kernel(dr: float) -> np.ndarray:
    K = _half_width(dr)
    c = np.full(2 * K + 1, dr)
    c[0] = c[-1] = 0.5 * dr
    return c


def _extended_mt(p: ContinuumProfile, mb: MagnetizationPair):
    K = _half_width(p.dr)
    mt = p.m_tilde
    if p.boundary == "free":
        return mt, 0
    left = np.full(K, -mb.m_tilde)
    right = np.full(K, mb.m_tilde)
    return np.concatenate([left, mt, right]), K


def _trap_weights(n: int, dr: float) -> np.ndarray:
    w = np.full(n, dr)
    w[0] = w[-1] = 0.5 * dr
    return w


def excess_functional(p: ContinuumProfile, beta: float, theta: float,
                      mb: MagnetizationPair | None = None) -> float:
    """Discretised excess free energy.

    Nonlocal part 1/4 sum_{k,l} dr c_{k-l} (mt_k - mt_l)^2 over the grid padded by
    the clamped values (out-by-out pairs vanish identically); local part is the
    trapezoid rule of f(m(r)) - f(m_beta) on [-L, L].
    """
    mb = mb or equilibrium_magnetization(beta, theta)
    fb = float(free_energy(mb.m1, mb.m2, beta, theta))
    c = _kernel(p.dr)
    ext, _ = _extended_mt(p, mb)
    # sum_l c_{k-l}(a_k - a_l)^2 = a_k^2 S_k - 2 a_k (c*a)_k + (c*a^2)_k, S_k the kernel mass seen at k
    if p.boundary == "clamped":
        # beyond the padding the clamped constants continue
        K = len(c) // 2
        far = np.concatenate([np.full(K, ext[0]), ext, np.full(K, ext[-1])])
        conv = np.convolve(far, c, mode="same")[K:-K]
        conv2 = np.convolve(far**2, c, mode="same")[K:-K]
        mass = np.full_like(ext, c.sum())
    else:
        conv = np.convolve(ext, c, mode="same")
        conv2 = np.convolve(ext**2, c, mode="same")
        mass = np.convolve(np.ones_like(ext), c, mode="same")
    nonlocal_ = 0.25 * p.dr * float(np.sum(ext**2 * mass - 2 * ext * conv + conv2))
    loc = free_energy(p.m1, p.m2, beta, theta) - fb
    local = float(np.sum(_trap_weights(len(p.m1), p.dr) * loc))
    return nonlocal_ + local


def excess_functional_grad(p: ContinuumProfile, beta: float, theta: float,
                           mb: MagnetizationPair | None = None):
    """Exact gradient of :func:`excess_functional` w.r.t. the grid values (m1_k, m2_k)."""
    mb = mb or equilibrium_magnetization(beta, theta)
    c = _kernel(p.dr)
    ext, off = _extended_mt(p, mb)
    K = len(c) // 2
    if p.boundary == "clamped":
        ext_far = np.concatenate([np.full(K, ext[0]), ext, np.full(K, ext[-1])])
        conv = np.convolve(ext_far, c, mode="same")[K:-K]
        mass = np.full_like(ext, c.sum())
    else:
        conv = np.convolve(ext, c, mode="same")
        mass = np.convolve(np.ones_like(ext), c, mode="same")
    # d/d mt_k of 1/4 sum_{k,l} W_kl (a_k - a_l)^2 is sum_l W_kl (a_k - a_l)
    dmt = p.dr * (ext * mass - conv)
    n = len(p.m1)
    dmt = dmt[off:off + n]
    g1, g2 = free_energy_grad(p.m1, p.m2, beta, theta)
    w = _trap_weights(n, p.dr)
    return 0.5 * dmt + w * g1, 0.5 * dmt + w * g2


@dataclass
class InstantonResult:
    profile: ContinuumProfile
    fstar: float
    iterations: int
    grad_norm: float
    history: list = field(default_factory=list)


def _pack(m1, m2, k0):
    # the centre point carries one free coordinate u, with m(0) = (u, -u)
    return np.concatenate([np.delete(m1, k0), np.delete(m2, k0), [m1[k0]]])


def _unpack(x, n, k0):
    a = np.insert(x[: n - 1], k0, x[-1])
    b = np.insert(x[n - 1: 2 * n - 2], k0, -x[-1])
    return a, b


def instanton(beta: float, theta: float, L_grid: float = 10.0, dr: float = 1 / 32,
              tol: float = 1e-7, max_iter: int = 50_000, mb: MagnetizationPair | None = None,
              init: ContinuumProfile | None = None) -> InstantonResult:
    """Minimise the excess functional between T m_beta (left) and m_beta (right).

    The centering constraint m1(0) + m2(0) = 0 is built into the
    parametrisation and the box |m| <= 1 is handled by projection inside
    L-BFGS-B, whose line search never accepts an increase.  ``tol`` bounds the
    sup norm of the projected gradient divided by dr (a functional derivative).
    """
    from scipy.optimize import minimize

    if L_grid < 10:
        raise ValueError("L_grid must be at least 10")
    mb = mb or equilibrium_magnetization(beta, theta)
    n = int(round(2 * L_grid / dr)) + 1
    if n % 2 == 0:
        raise ValueError("grid must contain r = 0")
    k0 = n // 2
    lim = 1 - 1e-12
    if init is None:
        r = -L_grid + dr * np.arange(n)
        s = np.tanh(2.0 * r)
        tm = mb.T()
        m1 = 0.5 * (1 - s) * tm.m1 + 0.5 * (1 + s) * mb.m1
        m2 = 0.5 * (1 - s) * tm.m2 + 0.5 * (1 + s) * mb.m2
    else:
        m1, m2 = init.m1.copy(), init.m2.copy()
    u0 = 0.5 * (m1[k0] - m2[k0])
    m1[k0], m2[k0] = u0, -u0
    history = []

    def fun(x):
        a, b = _unpack(x, n, k0)
        p = ContinuumProfile(dr, a, b, "clamped")
        F = excess_functional(p, beta, theta, mb)
        g1, g2 = excess_functional_grad(p, beta, theta, mb)
        grad = np.concatenate([np.delete(g1, k0), np.delete(g2, k0), [g1[k0] - g2[k0]]])
        return F, grad

    def cb(x):
        history.append(fun(x)[0])

    x0 = _pack(m1, m2, k0)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(-lim, lim)] * len(x0),
                   callback=cb, options={"maxiter": max_iter, "maxcor": 30,
                                         "ftol": 1e-16, "gtol": 1e-3 * tol * dr})
    a, b = _unpack(res.x, n, k0)
    F, grad = fun(res.x)
    # projected gradient: components pushing against an active bound do not count
    at_lo = res.x <= -lim
    at_hi = res.x >= lim
    pg = np.where((at_lo & (grad > 0)) | (at_hi & (grad < 0)), 0.0, grad)
    gnorm = float(np.max(np.abs(pg))) / dr
    prof = ContinuumProfile(dr, a, b, "clamped")
    if gnorm >= tol:
        raise ConvergenceError(f"instanton did not converge (grad {gnorm:.3e})", last=prof)
    return InstantonResult(prof, F, int(res.nit), gnorm, history)


@lru_cache(maxsize=64)
def surface_tension(beta: float, theta: float, L_grid: float = 10.0, dr: float = 1 / 32,
                    tol: float = 1e-7) -> float:
    """F* from a cached instanton run."""
    return instanton(beta, theta, L_grid, dr, tol).fstar


def field_strength_V(beta: float, theta: float, mb: MagnetizationPair | None = None) -> float:
    if theta == 0:
        return 0.0
    mb = mb or equilibrium_magnetization(beta, theta)
    t = math.tanh(2 * beta * theta)
    num = 1 + mb.m2 * t
    den = 1 - mb.m1 * t
    if den <= 0 or num <= 0:
        raise ValueError("field strength undefined: non-positive argument")
    return math.log(num / den)


def write_instanton_csv(path, profile: ContinuumProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "m1", "m2", "m_tilde"])
        for r, a, b, t in zip(profile.r, profile.m1, profile.m2, profile.m_tilde):
            w.writerow([repr(float(r)), repr(float(a)), repr(float(b)), repr(float(t))])


def summary_json(beta: float, theta: float, fstar: float, kappa: float | None = None) -> str:
    mb = equilibrium_magnetization(beta, theta)
    V = field_strength_V(beta, theta, mb)
    doc = {
        "beta": beta, "theta": theta, "F_star": fstar, "V": V, "h": 2 * fstar / V,
        "m_beta": [mb.m1, mb.m2], "kappa": kappa,
    }
    return json.dumps(doc, indent=2, sort_keys=True)
