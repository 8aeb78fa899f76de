"""Two-valued step profiles on the Brownian scale, the limiting profile
built from h-extrema, and the rate functional Gamma.

A profile takes the value m_beta (sign +1) or T m_beta (sign -1) and is
right-continuous; it is stored as its starting sign and sorted jump times.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .renewal import MIN, RenewalRecord, WalkPath

__all__ = [
    "StepProfile", "variation", "t_flip", "q_extend", "partition_C_B", "u_star_gamma",
    "u_star_from_bbm", "GammaReport", "gamma_functional", "gamma_blocks", "flip_on",
    "minimizer_check", "skorohod_distance_upper", "uq_membership", "PartitionError",
]


class PartitionError(ValueError):
    pass


@dataclass
class StepProfile:
    domain: tuple
    start: int
    jumps: np.ndarray
    m_beta: tuple = (1.0, 1.0)

    def __post_init__(self):
        a, b = self.domain
        self.domain = (float(a), float(b))
        if not a < b:
            raise ValueError("empty domain")
        if self.start not in (1, -1):
            raise ValueError("start must be +1 (m_beta) or -1 (T m_beta)")
        self.jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        if np.any(np.diff(self.jumps) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if len(self.jumps) and (self.jumps[0] < a or self.jumps[-1] >= b):
            raise ValueError("jumps must lie in [a, b)")
        self.m_beta = (float(self.m_beta[0]), float(self.m_beta[1]))

    @property
    def m_tilde(self) -> float:
        return 0.5 * (self.m_beta[0] + self.m_beta[1])

    def sign(self, r):
        """+1 where the profile is m_beta, -1 where it is T m_beta."""
        r = np.asarray(r, dtype=float)
        n = np.searchsorted(self.jumps, r, side="right")
        return np.where(n % 2 == 0, self.start, -self.start)

    def value(self, r) -> np.ndarray:
        """The pair (u_1(r), u_2(r)); T m = (-m_2, -m_1)."""
        s = self.sign(r)
        m1, m2 = self.m_beta
        return np.stack([np.where(s > 0, m1, -m2), np.where(s > 0, m2, -m1)], axis=-1)

    def n_jumps(self, a: float, b: float) -> int:
        return int(np.searchsorted(self.jumps, b, side="left") - np.searchsorted(self.jumps, a, side="left"))

    def fraction_plus(self, x: float, y: float) -> float:
        """Share of [x, y) on which the profile equals m_beta."""
        if not y > x:
            raise ValueError("need y > x")
        pts = np.concatenate([[x], self.jumps[(self.jumps > x) & (self.jumps < y)], [y]])
        s = self.sign(pts[:-1])
        return float(np.sum(np.diff(pts)[s > 0]) / (y - x))

    def same_as(self, other: "StepProfile") -> bool:
        return (self.domain == other.domain and self.start == other.start
                and np.array_equal(self.jumps, other.jumps))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start_value", self.start])
            w.writerow(["jump_time"])
            for t in self.jumps:
                w.writerow([repr(float(t))])


def variation(u: StepProfile, a: float, b: float) -> float:
    """Total variation on [a, b): 4 m~ per jump."""
    return 4 * u.m_tilde * u.n_jumps(a, b)


def t_flip(u: StepProfile) -> StepProfile:
    return StepProfile(u.domain, -u.start, u.jumps.copy(), u.m_beta)


def q_extend(u: StepProfile, Q: float) -> StepProfile:
    """Freeze u outside [-Q, Q]; the result lives on the whole line."""
    a, b = u.domain
    if a > -Q or b < Q:
        raise ValueError("profile must be defined on [-Q, Q]")
    keep = u.jumps[(u.jumps > -Q) & (u.jumps <= Q)]
    start = int(u.sign(-Q))
    return StepProfile((-math.inf, math.inf), start, keep, u.m_beta)


def partition_C_B(u: StepProfile, rho: float, delta: float, grid: float | None = None) -> dict:
    """Jump neighbourhoods C_i and their complement B, snapped outward to the
    grid of step ``grid`` (default delta)."""
    if not rho > delta > 0:
        raise PartitionError("need rho > delta > 0")
    step = delta if grid is None else grid
    a, b = u.domain
    j = u.jumps
    if len(j) > 1 and np.min(np.diff(j)) <= 8 * rho + 8 * delta:
        raise PartitionError("8 rho + 8 delta must be smaller than the minimal jump gap")
    C = []
    for r in j:
        lo = math.floor((r - rho) / step + 1e-9) * step
        hi = math.ceil((r + rho) / step - 1e-9) * step
        C.append((max(lo, a), min(hi, b)))
    for (l1, r1), (l2, r2) in zip(C, C[1:]):
        if r1 > l2:
            raise PartitionError("neighbourhoods overlap")
    B, cur = [], a
    for lo, hi in C:
        if lo > cur:
            B.append((cur, lo))
        cur = hi
    if cur < b:
        B.append((cur, b))
    return {"C": C, "B": B}


def u_star_gamma(rec: RenewalRecord, m_beta, Q: float, eps: float | None = None) -> StepProfile:
    """Profile on [-Q, Q] from maximal elongations: m_beta on rising ones.

    Jump times are eps * alpha*_i; ``eps`` defaults to the record's step.
    """
    if not rec.meta.get("boundary_complete", True):
        raise ValueError("record is not boundary-complete")
    step = rec.step if eps is None else eps
    t = (rec.indices - rec.origin) * step
    if len(t) < 2 or t[0] > -Q or t[-1] < Q:
        raise ValueError("record does not cover [-Q, Q]")
    signs = -rec.labels[:-1]
    k = int(np.searchsorted(t, -Q, side="right")) - 1
    inner = t[(t > -Q) & (t < Q)]
    return StepProfile((-Q, Q), int(signs[k]), inner, m_beta)


def u_star_from_bbm(rec: RenewalRecord, m_beta) -> StepProfile:
    """m_beta on [S_i, S_{i+1}) after an h-minimum, T m_beta after an
    h-maximum; the span starts at the first certified point."""
    cert = np.flatnonzero(rec.certified)
    if len(cert) < 2:
        raise ValueError("need at least two certified extrema")
    k0 = int(cert[0])
    t = rec.times[k0:]
    lab = rec.labels[k0:]
    start = 1 if lab[0] == MIN else -1
    return StepProfile((float(t[0]), float(t[-1])), start, t[1:-1], m_beta)


# ---------------------------------------------------------------------------
# the rate functional


@dataclass
class GammaReport:
    value: float
    jump_part: float
    field_part: float
    terms: list = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps({"value": self.value, "jump_part": self.jump_part,
                           "field_part": self.field_part, "terms": self.terms}, **kw)


def _W_at(W: WalkPath, r):
    """W at the nearest grid point(s) of r."""
    r = np.asarray(r, dtype=float)
    lo, hi = W.time(0), W.time(len(W) - 1)
    tol = 0.5 * W.step + 1e-12
    if np.any(r < lo - tol) or np.any(r > hi + tol):
        raise ValueError(f"point outside the path span [{lo}, {hi}]")
    k = np.clip(np.rint(r / W.step).astype(np.int64) + W.origin, 0, len(W) - 1)
    out = W.values[k]
    return float(out) if out.ndim == 0 else out


@njit(cache=True)
def _gamma_core(ju, start_u, js, start_s, a, b, wv, origin, step, fstar, V):
    """Sum of the jump and field terms on [a, b) (see gamma_functional)."""
    nu, ns = len(ju), len(js)
    iu = 0
    while iu < nu and ju[iu] < a:
        iu += 1
    i_s = 0
    while i_s < ns and js[i_s] < a:
        i_s += 1
    su = start_u if iu % 2 == 0 else -start_u
    ss = start_s if i_s % 2 == 0 else -start_s
    r = a
    jump = 0.0
    fld = 0.0
    first = True
    n = len(wv)
    while True:
        # jumps located exactly at r
        cu = 0
        cs = 0
        if iu < nu and ju[iu] == r and r < b:
            cu = 1
            su = -su
            iu += 1
        if i_s < ns and js[i_s] == r and r < b:
            cs = 1
            ss = -ss
            i_s += 1
        if not first and cu == 0 and cs == 0:
            break
        first = False
        nxt = b
        if iu < nu and ju[iu] < nxt:
            nxt = ju[iu]
        if i_s < ns and js[i_s] < nxt:
            nxt = js[i_s]
        k0 = min(max(int(np.rint(r / step)) + origin, 0), n - 1)
        k1 = min(max(int(np.rint(nxt / step)) + origin, 0), n - 1)
        jump += fstar * (cu - cs)
        fld += -V * (su - ss) / 2.0 * (wv[k1] - wv[k0])
        if nxt >= b:
            break
        r = nxt
    return jump, fld


def _check_span(W: WalkPath, a: float, b: float):
    lo, hi = W.time(0), W.time(len(W) - 1)
    tol = 0.5 * W.step + 1e-12
    if a < lo - tol or b > hi + tol:
        raise ValueError(f"window [{a}, {b}) outside the path span [{lo}, {hi}]")


def gamma_functional(u: StepProfile, u_star: StepProfile, W: WalkPath, window, fstar: float,
                     V: float, detail: bool = False) -> GammaReport:
    """Finite-window functional on [a, b).

    The points are the jumps of u or u* in [a, b) together with a itself
    (a zero-cost point when neither jumps there); the increment after the
    last point runs to b.  The common normalisation 1/(2 m~) cancels
    against the jump size and the field difference, so the terms are
    F* (n_u - n_u*) and -V (s_u - s_u*)/2 (W(r') - W(r)).
    """
    a, b = map(float, window)
    _check_span(W, a, b)
    if not detail:
        jp, fp = _gamma_core(u.jumps, u.start, u_star.jumps, u_star.start, a, b, W.values,
                             W.origin, W.step, fstar, V)
        return GammaReport(jp + fp, jp, fp, [])
    ju = u.jumps[(u.jumps >= a) & (u.jumps < b)]
    js = u_star.jumps[(u_star.jumps >= a) & (u_star.jumps < b)]
    pts = np.union1d(np.union1d(ju, js), [a])
    nxt = np.append(pts[1:], b)
    su, ss = u.sign(pts), u_star.sign(pts)
    w = _W_at(W, pts)
    wn = _W_at(W, nxt)
    cu = np.isin(pts, ju).astype(float)
    cs = np.isin(pts, js).astype(float)
    jump = fstar * (cu - cs)
    fld = -V * (su - ss) / 2 * (wn - w)
    terms = [{"r": float(r), "jump": float(x), "field": float(y)} for r, x, y in zip(pts, jump, fld)]
    return GammaReport(float(jump.sum() + fld.sum()), float(jump.sum()), float(fld.sum()), terms)


def gamma_blocks(u: StepProfile, u_star: StepProfile, W: WalkPath, fstar: float, V: float) -> list:
    """Per-block values on consecutive [S_j, S_{j+1}) of u*'s span; their sum
    is the full-line functional restricted to that span."""
    edges = np.concatenate([[u_star.domain[0]], u_star.jumps, [u_star.domain[1]]])
    return [gamma_functional(u, u_star, W, (x, y), fstar, V).value
            for x, y in zip(edges[:-1], edges[1:]) if y > x]


def flip_on(u: StepProfile, intervals) -> StepProfile:
    """T-flip u on each [r1, r2); the intervals are disjoint."""
    ivs = sorted((float(x), float(y)) for x, y in intervals)
    for (x1, y1), (x2, _) in zip(ivs, ivs[1:]):
        if y1 > x2:
            raise ValueError("flip intervals overlap")
    a, b = u.domain
    pts = list(u.jumps)
    for x, y in ivs:
        if not a <= x < y <= b:
            raise ValueError("flip interval outside the domain")
        pts.append(x)
        if y < b:
            pts.append(y)
    # a point appearing twice is a cancelled jump
    vals, cnt = np.unique(np.asarray(pts, dtype=float), return_counts=True)
    new = vals[cnt % 2 == 1]
    start = u.start
    if len(new) and new[0] == a:
        start, new = -start, new[1:]
    return StepProfile(u.domain, start, new, u.m_beta)


def minimizer_check(W: WalkPath, u_star: StepProfile, n_perturb: int, seed: int, fstar: float,
                    V: float) -> dict:
    """Random local perturbations of u* and the sign of Gamma for each.

    Kinds: an opposite interval inside a stretch, removal of both jumps of a
    stretch, flips touching the left or the right end of a stretch, and
    composites of several of these on distinct stretches (which must add up).
    Every value comes from the general evaluator on the whole span of u*;
    the single kinds are also compared with their closed forms.  Endpoints
    are grid points of W.
    """
    rng = np.random.default_rng(seed)
    edges = np.concatenate([[u_star.domain[0]], u_star.jumps, [u_star.domain[1]]])
    # stretches bounded by two jumps of u*
    inner = [(edges[i], edges[i + 1]) for i in range(1, len(edges) - 2)]
    if not inner:
        raise ValueError("u* needs at least two jumps")
    a, b = u_star.domain
    _check_span(W, a, b)
    js, st = u_star.jumps, u_star.start
    wv, org, dt = W.values, W.origin, W.step

    def gam(jumps):
        jp, fp = _gamma_core(jumps, st, js, st, a, b, wv, org, dt, fstar, V)
        return jp + fp

    def w_at(r):
        return wv[int(round(r / dt)) + org]

    g0 = gam(js)
    out = {"n": 0, "min_gamma": math.inf, "nonpositive": 0, "by_kind": {},
           "max_additivity_error": 0.0, "max_closed_form_error": 0.0, "gamma_self": g0}

    def grid_pt(lo, hi):
        k_lo, k_hi = math.ceil(lo / dt + 1e-9), math.floor(hi / dt - 1e-9)
        if k_hi < k_lo:
            return None
        return int(rng.integers(k_lo, k_hi + 1)) * dt

    def single(kind, j):
        s0, s1 = inner[j]
        sgn = int(u_star.sign(s0))
        if kind == "insert":
            r1 = grid_pt(s0, s1)
            r2 = grid_pt(r1, s1) if r1 is not None else None
            if r1 is None or r2 is None or r2 <= r1:
                return None
            return (r1, r2), 2 * fstar + sgn * V * (w_at(r2) - w_at(r1))
        if kind == "remove":
            return (s0, s1), -2 * fstar + sgn * V * (w_at(s1) - w_at(s0))
        if kind == "left":
            r2 = grid_pt(s0, s1)
            if r2 is None or r2 <= s0:
                return None
            return (s0, r2), sgn * V * (w_at(r2) - w_at(s0))
        r1 = grid_pt(s0, s1)
        if r1 is None or r1 <= s0:
            return None
        return (r1, s1), sgn * V * (w_at(s1) - w_at(r1))

    def flipped(ivs):
        # flipping on [r1, r2) toggles jumps at r1 and r2
        return np.setxor1d(js, np.asarray(ivs, dtype=float).ravel(), assume_unique=True)

    kinds = ("insert", "remove", "left", "right")
    for _ in range(n_perturb):
        if rng.random() < 0.2 and len(inner) >= 3:
            k = int(rng.integers(2, min(4, len(inner)) + 1))
            idx = rng.choice(len(inner), size=k, replace=False)
            parts = [single(kinds[rng.integers(4)], int(j)) for j in idx]
            parts = sorted(p for p in parts if p is not None)
            if not parts:
                continue
            # no two flips may share an endpoint
            sep = [parts[0]]
            for p in parts[1:]:
                if p[0][0] > sep[-1][0][1]:
                    sep.append(p)
            g = gam(flipped([p[0] for p in sep]))
            singles = sum(gam(flipped([p[0]])) for p in sep)
            out["max_additivity_error"] = max(out["max_additivity_error"], abs(g - singles))
            kind = "composite"
        else:
            kind = kinds[rng.integers(4)]
            r = single(kind, int(rng.integers(len(inner))))
            if r is None:
                continue
            g = gam(flipped([r[0]]))
            out["max_closed_form_error"] = max(out["max_closed_form_error"], abs(g - r[1]))
        out["n"] += 1
        out["min_gamma"] = min(out["min_gamma"], g)
        ok = g > 0
        out["nonpositive"] += int(not ok)
        d = out["by_kind"].setdefault(kind, {"n": 0, "min": math.inf, "violations": 0})
        d["n"] += 1
        d["min"] = min(d["min"], g)
        d["violations"] += int(not ok)
    out["ok"] = out["nonpositive"] == 0 and g0 == 0.0
    return out


# ---------------------------------------------------------------------------
# Skorohod distance


class _PiecewiseLinear:
    """Increasing piecewise-linear map with slope 1 beyond its knots."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if len(self.x) == 0:
            return t.copy()
        inside = np.interp(t, self.x, self.y)
        return np.where(t < self.x[0], self.y[0] + t - self.x[0],
                        np.where(t > self.x[-1], self.y[-1] + t - self.x[-1], inside))

    def inverse(self, s):
        return _PiecewiseLinear(self.y, self.x)(s)

    def norm(self) -> float:
        if len(self.x) < 2:
            return 0.0
        slope = np.diff(self.y) / np.diff(self.x)
        return float(np.max(np.abs(np.log(slope))))


def _truncated_sign(u: StepProfile, t, T):
    t = np.asarray(t, dtype=float)
    return u.sign(np.where(t >= 0, np.minimum(t, T), np.maximum(t, -T)))


def skorohod_distance_upper(u: StepProfile, v: StepProfile) -> dict:
    """Upper bound on the Skorohod distance through an explicit time change.

    Jumps are matched in order from the left; lambda is piecewise linear
    through the matched pairs with slope 1 beyond them.  Unmatched jumps are
    paid for by the sup term.  The integral over T is exact because the sup
    is constant between consecutive values of |jump time|.  Both directions
    bound the same distance, so the smaller one is returned (the result is
    symmetric in u and v).
    """
    a, b = _skorohod_one_way(u, v), _skorohod_one_way(v, u)
    if b["bound"] < a["bound"]:
        return dict(b, direction="v->u")
    return dict(a, direction="u->v")


def _skorohod_one_way(u: StepProfile, v: StepProfile) -> dict:
    k = min(len(u.jumps), len(v.jumps))
    lam = _PiecewiseLinear(u.jumps[:k], v.jumps[:k])
    norm = lam.norm()
    d_val = np.abs(np.asarray(u.m_beta[0]) + u.m_beta[1]) * 2   # || m - T m ||_1
    gap = min(1.0, d_val)
    bps = np.unique(np.abs(np.concatenate([u.jumps, v.jumps, [0.0]])))

    def sup_at(T):
        cand = np.concatenate([u.jumps, lam.inverse(v.jumps), [T, -T], lam.inverse([T, -T])])
        cand = cand[np.isfinite(cand)]
        far = np.max(np.abs(cand)) + 1 if len(cand) else 1.0
        cand = np.concatenate([cand, [-far, far]])
        su = _truncated_sign(u, cand, T)
        sv = _truncated_sign(v, lam(cand), T)
        return gap if np.any(su != sv) else 0.0

    integral = 0.0
    edges = np.append(bps, math.inf)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = lo + 1.0 if math.isinf(hi) else 0.5 * (lo + hi)
        s = sup_at(mid)
        if s:
            integral += s * (math.exp(-lo) - (0.0 if math.isinf(hi) else math.exp(-hi)))
    return {"bound": max(norm, integral), "lambda_norm": norm, "sup_integral": integral,
            "matched": k, "unmatched": abs(len(u.jumps) - len(v.jumps))}


def uq_membership(u: StepProfile, u_star_g: StepProfile, Q: float, fQ: float) -> dict:
    """Tail equality on |r| >= Q-1 and the variation budget on [-Q, Q)."""
    def tail(p, lo, hi):
        return p.jumps[(p.jumps > lo) & (p.jumps <= hi)]
    right = (int(u.sign(Q - 1)) == int(u_star_g.sign(Q - 1))
             and np.array_equal(tail(u, Q - 1, math.inf), tail(u_star_g, Q - 1, math.inf)))
    left = (int(u.sign(-Q + 1)) == int(u_star_g.sign(-Q + 1))
            and np.array_equal(tail(u, -math.inf, -Q + 1), tail(u_star_g, -math.inf, -Q + 1)))
    vu, vs = variation(u, -Q, Q), variation(u_star_g, -Q, Q)
    budget = vu <= vs * fQ
    return {"member": bool(left and right and budget), "tail_right": bool(right),
            "tail_left": bool(left), "variation": vu, "variation_star": vs, "fQ": fQ}
