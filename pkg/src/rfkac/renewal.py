"""Drawdown h-extrema, maximal elongations and the renewal laws they obey.

Paths are stored as a value array with an origin index; time of index ``i``
is ``(i - origin) * step``.  Every extremum construction here breaks ties
towards the LAST time at which an extreme value is attained.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats
from scipy.special import erfc, zeta

__all__ = [
    "WalkPath",
    "RenewalRecord",
    "PropertyViolation",
    "sample_bbm",
    "drawdown_extrema",
    "check_extrema_properties",
    "maximal_elongations",
    "stopping_device",
    "sandwich_check",
    "relabel_S",
    "Relabeled",
    "theoretical_laws",
    "RenewalLaws",
    "empirical_law_test",
    "renewal_count_check",
    "bbm_interarrivals",
    "bbm_residuals",
    "bbm_residuals_bilateral",
    "dt_halving_study",
    "grid_threshold",
    "write_record_csv",
    "write_law_table",
]


class PropertyViolation(AssertionError):
    pass


@dataclass
class WalkPath:
    step: float
    values: np.ndarray
    origin: int = 0
    kind: str = "deterministic"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) == 0:
            raise ValueError("path values must be a non-empty 1-d array")
        if not 0 <= self.origin < len(self.values):
            raise ValueError("origin outside the path")
        if self.values[self.origin] != 0:
            raise ValueError("path must vanish at its origin")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")
        if self.kind not in ("chi-walk", "bbm-sample", "deterministic"):
            raise ValueError(f"unknown path kind {self.kind!r}")

    def __len__(self):
        return len(self.values)

    def time(self, idx):
        return (np.asarray(idx) - self.origin) * self.step

    def index_of(self, t: float) -> int:
        """Nearest grid index to time t (clipped to the path)."""
        k = int(round(t / self.step)) + self.origin
        return min(max(k, 0), len(self.values) - 1)

    def shifted(self, c: float) -> "WalkPath":
        # values only; the origin no longer vanishes so bypass validation
        p = object.__new__(WalkPath)
        p.step, p.values, p.origin, p.kind = self.step, self.values + c, self.origin, self.kind
        return p

    def negated(self) -> "WalkPath":
        return WalkPath(self.step, -self.values, self.origin, self.kind)


MAX, MIN = 1, -1


@dataclass
class RenewalRecord:
    """Alternating extremum skeleton of a path.

    ``labels`` holds +1 for a maximum and -1 for a minimum.  For elongation
    records the sign of the interval [idx[i], idx[i+1]] is -labels[i].
    """

    indices: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    certified: np.ndarray
    step: float = 1.0
    origin: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.certified = np.asarray(self.certified, dtype=bool)
        n = len(self.indices)
        if not (len(self.labels) == len(self.values) == len(self.certified) == n):
            raise ValueError("record arrays must have equal length")
        if n > 1:
            if np.any(np.diff(self.indices) <= 0):
                raise PropertyViolation("extremum times must be strictly increasing")
            if np.any(self.labels[1:] == self.labels[:-1]):
                raise PropertyViolation("labels must alternate")
            gaps = np.diff(self.values) * self.labels[1:]
            if np.any(gaps < 0):
                raise PropertyViolation("value gaps do not follow the min/max pattern")

    def __len__(self):
        return len(self.indices)

    @property
    def times(self) -> np.ndarray:
        return (self.indices - self.origin) * self.step

    def certified_indices(self) -> np.ndarray:
        return self.indices[self.certified]

    @property
    def signs(self) -> np.ndarray:
        """Sign of each interval between consecutive points (+1 rising)."""
        return -self.labels[:-1]


# ---------------------------------------------------------------------------
# Brownian samples


def sample_bbm(T: float, dt: float, seed=None, rng: np.random.Generator | None = None) -> WalkPath:
    """Bilateral Brownian motion on the grid [-T, T] with spacing dt."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    n = int(round(T / dt))
    sd = math.sqrt(dt)
    right = np.cumsum(rng.standard_normal(n)) * sd
    left = np.cumsum(rng.standard_normal(n)) * sd
    vals = np.concatenate([left[::-1], [0.0], right])
    return WalkPath(dt, vals, origin=n, kind="bbm-sample")


# ---------------------------------------------------------------------------
# drawdown construction


@njit(cache=True)
def _drawdown(v, h, start):
    n = v.shape[0]
    idx = np.empty(n, np.int64)
    lab = np.empty(n, np.int64)
    taus = np.empty(n, np.int64)
    k = 0
    if start >= n:
        return idx[:0], lab[:0], taus[:0]
    # first a drawdown from the running maximum
    ext = v[start]
    arg = start
    mode = MAX
    i = start
    while i < n:
        x = v[i]
        if mode == MAX:
            if x >= ext:
                ext = x
                arg = i
            if ext - x >= h:
                idx[k] = arg
                lab[k] = MAX
                taus[k] = i
                k += 1
                mode = MIN
                ext = x
                arg = i
        else:
            if x <= ext:
                ext = x
                arg = i
            if x - ext >= h:
                idx[k] = arg
                lab[k] = MIN
                taus[k] = i
                k += 1
                mode = MAX
                ext = x
                arg = i
        i += 1
    return idx[:k], lab[:k], taus[:k]


def drawdown_extrema(path: WalkPath, h: float, start: int = 0, check: bool = True) -> RenewalRecord:
    """One-sided (tau, beta, sigma) construction started at index ``start``.

    Each sigma_k is the last extreme point before the stopping time tau_k at
    which the path has moved by h against it.  The first point sigma_0 is
    certified only if the path also rose by h to reach it inside the window.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    v = path.values
    idx, lab, taus = _drawdown(v, float(h), int(start))
    cert = np.ones(len(idx), dtype=bool)
    if len(idx):
        s0 = idx[0]
        cert[0] = bool(v[s0] - v[start:s0 + 1].min() >= h)
    rec = RenewalRecord(idx, lab, v[idx], cert, path.step, path.origin,
                        meta={"construction": "drawdown", "h": h, "tau": taus, "start": start})
    if check:
        check_extrema_properties(rec, v, h)
    return rec


@njit(cache=True)
def _leg_check(v, a, b, rising, h):
    """Return 0 if the leg [a, b] obeys the h-extremum leg properties."""
    lo = v[a] if rising else v[b]
    hi = v[b] if rising else v[a]
    if hi - lo < h:
        return 1
    run = v[a]
    for y in range(a, b + 1):
        x = v[y]
        if x < lo or x > hi:
            return 2
        if rising:
            if x > run:
                run = x
            if run - x >= h:
                return 3
        else:
            if x < run:
                run = x
            if x - run >= h:
                return 3
    return 0


def check_extrema_properties(rec: RenewalRecord, v: np.ndarray, h: float) -> None:
    """Assert the two leg properties on every consecutive pair of extrema.

    A falling leg [max, min] drops by at least h, stays between its end
    values and never rises by h; a rising leg is the mirror image.
    """
    for i in range(len(rec) - 1):
        rising = rec.labels[i] == MIN
        code = _leg_check(v, int(rec.indices[i]), int(rec.indices[i + 1]), rising, float(h))
        if code:
            raise PropertyViolation(f"leg {i} violates the extremum properties (code {code})")


# ---------------------------------------------------------------------------
# maximal elongations


@njit(cache=True)
def _suffix_args(v):
    # last arg-extremum of v[i:], ties towards the later index
    n = v.shape[0]
    amax = np.empty(n, np.int64)
    amin = np.empty(n, np.int64)
    amax[n - 1] = n - 1
    amin[n - 1] = n - 1
    for i in range(n - 2, -1, -1):
        j = amax[i + 1]
        amax[i] = j if v[j] >= v[i] else i
        j = amin[i + 1]
        amin[i] = j if v[j] <= v[i] else i
    return amax, amin


@njit(cache=True)
def _prefix_args(v):
    n = v.shape[0]
    amax = np.empty(n, np.int64)
    amin = np.empty(n, np.int64)
    amax[0] = 0
    amin[0] = 0
    for i in range(1, n):
        j = amax[i - 1]
        amax[i] = i if v[i] >= v[j] else j
        j = amin[i - 1]
        amin[i] = i if v[i] <= v[j] else j
    return amax, amin


@njit(cache=True)
def _largest_counter(v, a, b, rising):
    """Largest move against the leg direction inside [a, b].

    Returns (size, x, y) with x < y: for a rising leg x is the last maximum of
    [a, y] and y the last point realising the largest drop.
    """
    best = -1.0
    bx = a
    by = a
    run = v[a]
    arg = a
    for y in range(a, b + 1):
        x = v[y]
        if rising:
            if x >= run:
                run = x
                arg = y
            d = run - x
        else:
            if x <= run:
                run = x
                arg = y
            d = x - run
        if d >= best and y > arg:
            best = d
            bx = arg
            by = y
    return best, bx, by


@njit(cache=True)
def _elongation_points(v, b):
    n = v.shape[0]
    smax, smin = _suffix_args(v)
    pmax, pmin = _prefix_args(v)
    G = smax[0]
    g = smin[0]
    pts = np.empty(n, np.int64)
    labs = np.empty(n, np.int64)
    if v[G] - v[g] < b:
        return pts[:0], labs[:0]
    # seed with the global extremes, extend towards both window edges
    left = np.empty(n, np.int64)
    llab = np.empty(n, np.int64)
    nl = 0
    if G < g:
        e, t = G, MAX
        left[nl] = G; llab[nl] = MAX; nl += 1
        right0, rlab0 = g, MIN
    else:
        e, t = g, MIN
        left[nl] = g; llab[nl] = MIN; nl += 1
        right0, rlab0 = G, MAX
    while e > 0:
        if t == MAX:
            m = pmin[e]
            if v[e] - v[m] < b or m == e:
                break
            e, t = m, MIN
        else:
            m = pmax[e]
            if v[m] - v[e] < b or m == e:
                break
            e, t = m, MAX
        left[nl] = e; llab[nl] = t; nl += 1
    k = 0
    for j in range(nl - 1, -1, -1):
        pts[k] = left[j]; labs[k] = llab[j]; k += 1
    pts[k] = right0; labs[k] = rlab0; k += 1
    e, t = right0, rlab0
    while e < n - 1:
        if t == MAX:
            m = smin[e]
            if v[e] - v[m] < b or m == e:
                break
            e, t = m, MIN
        else:
            m = smax[e]
            if v[m] - v[e] < b or m == e:
                break
            e, t = m, MAX
        pts[k] = e; labs[k] = t; k += 1
    # split legs that contain a counter-move larger than b
    out = np.empty(n, np.int64)
    olab = np.empty(n, np.int64)
    no = 0
    stack_a = np.empty(n, np.int64)
    stack_b = np.empty(n, np.int64)
    stack_t = np.empty(n, np.int64)
    out[no] = pts[0]; olab[no] = labs[0]; no += 1
    for i in range(k - 1):
        # depth-first over sub-legs, emitting points left to right
        sp = 0
        stack_a[sp] = pts[i]; stack_b[sp] = pts[i + 1]; stack_t[sp] = labs[i]; sp += 1
        while sp > 0:
            sp -= 1
            a = stack_a[sp]; bb = stack_b[sp]; ta = stack_t[sp]
            size, x, y = _largest_counter(v, a, bb, ta == MIN)
            if size > b:
                # push right-most first so the left piece is handled next
                stack_a[sp] = y; stack_b[sp] = bb; stack_t[sp] = ta; sp += 1
                stack_a[sp] = x; stack_b[sp] = y; stack_t[sp] = -ta; sp += 1
                stack_a[sp] = a; stack_b[sp] = x; stack_t[sp] = ta; sp += 1
            else:
                out[no] = bb; olab[no] = -ta; no += 1
    return out[:no], olab[:no]


def stopping_device(path: WalkPath, threshold: float):
    """Stopping times hat T_k on both sides of the origin and their signs.

    Returns a dict with ``T`` (index offsets from the origin, sorted, T[0] = 0
    at position ``zero``), ``S`` (sign of the increment ending at each
    T_k, k != 0) and the alternating double-run indices ``istar``.
    """
    v = path.values
    o = path.origin
    right = [0]
    sig_r = []
    base = v[o]
    for t in range(o + 1, len(v)):
        if abs(v[t] - base) >= threshold:
            right.append(t - o)
            sig_r.append(int(np.sign(v[t] - base)))
            base = v[t]
    left = []
    sig_l = []
    base = v[o]
    for t in range(o - 1, -1, -1):
        if abs(base - v[t]) >= threshold:
            left.append(t - o)
            sig_l.append(int(np.sign(base - v[t])))
            base = v[t]
    # S[k] for k = 1..K is sig_r[k-1]; S[-k] is sig_l[k-1]
    S = {k + 1: s for k, s in enumerate(sig_r)}
    S.update({-(k + 1): s for k, s in enumerate(sig_l)})
    T = {0: 0}
    T.update({k: t for k, t in enumerate(right) if k > 0})
    T.update({-(k + 1): t for k, t in enumerate(left)})
    istar = {}
    K = len(sig_r)
    i1 = next((i for i in range(1, K) if S[i] == S[i + 1]), None)
    if i1 is not None:
        istar[1] = i1
        j = 1
        while True:
            prev = istar[j]
            nxt = next((i for i in range(prev + 2, K) if S[i] == S[i + 1] == -S[prev]), None)
            if nxt is None:
                break
            j += 1
            istar[j] = nxt
        # left side
        Kl = len(sig_l)
        ref = -S[i1]

        def left_run(top, sign):
            return next((i for i in range(top, -Kl - 1, -1)
                         if i + 1 in S and S[i] == S[i + 1] == sign), None)

        if Kl >= 1 and S[-1] == S[1] == ref:
            istar[-1] = -1
        else:
            c = left_run(-2, ref)
            if c is not None:
                istar[-1] = c
        j = -1
        while j in istar:
            c = left_run(istar[j] - 2, -S[istar[j]])
            if c is None:
                break
            j -= 1
            istar[j] = c
    return {"T": T, "S": S, "istar": istar, "threshold": threshold}


def maximal_elongations(path: WalkPath, b: float, f: float = 0.0, check: bool = True) -> RenewalRecord:
    """Maximal b-elongations with excess f of ``path``.

    The endpoints are built from the definition: the global extremes seed the
    skeleton, the skeleton is extended towards both window edges, and every
    leg holding a counter-move larger than b is split at its largest one.
    A sequence valid for excess f is also valid for excess 0, and the excess
    0 sequence is unique, so this is the only candidate; each leg is then
    tested against the excess-f clauses and failures are recorded in
    ``meta['invalid_legs']``.  The first and last points are not certified
    (their outer leg leaves the window).  The stopping-time device is
    attached as ``meta['device']``.
    """
    if not b > f >= 0:
        raise ValueError("need b > f >= 0")
    v = path.values
    pts, labs = _elongation_points(v, float(b))
    cert = np.ones(len(pts), dtype=bool)
    if len(pts):
        cert[0] = False
        cert[-1] = False
    dev = stopping_device(path, 0.5 * (b + f))
    rec = RenewalRecord(pts, labs, v[pts], cert, path.step, path.origin,
                        meta={"construction": "elongation", "b": b, "f": f, "device": dev})
    invalid = []
    for i in range(len(pts) - 1):
        if _p41_leg(v, int(pts[i]), int(pts[i + 1]), labs[i] == MIN, b, f) != 0:
            invalid.append(i)
    rec.meta["invalid_legs"] = invalid
    if check and f == 0 and invalid:
        raise PropertyViolation(f"legs {invalid} violate the elongation clauses")
    t = rec.times
    pos = np.flatnonzero(t > 0)
    neg = np.flatnonzero(t <= 0)
    complete = bool(len(pos) and len(neg) and cert[pos[0]] and cert[neg[-1]])
    rec.meta["zero_position"] = int(pos[0]) if len(pos) else len(t)
    rec.meta["boundary_complete"] = complete
    return rec


@njit(cache=True)
def _p41_leg(v, a, b_, rising, b, f):
    d = v[b_] - v[a]
    if rising:
        if d < b + f:
            return 1
    elif d > -b - f:
        return 1
    lo = v[a] if rising else v[b_]
    hi = v[b_] if rising else v[a]
    run = v[a]
    for y in range(a, b_ + 1):
        x = v[y]
        if x < lo or x > hi:
            return 2
        if rising:
            if x > run:
                run = x
            if x - run < -b + f:
                return 3
        else:
            if x < run:
                run = x
            if x - run > b - f:
                return 3
    return 0


def sandwich_check(rec: RenewalRecord, Q: float | None = None) -> dict:
    """Check hat T_i <= alpha*_{i+1} and alpha*_i <= hat T_{i*_{i+1}} for 1 <= i < kappa*(Q)."""
    dev = rec.meta["device"]
    T, istar = dev["T"], dev["istar"]
    rl = relabel_S(rec, Q if Q is not None else np.inf)
    alpha = {i: int(rec.indices[k] - rec.origin) for i, k in rl.position.items()}
    kq = rl.kappa_plus
    last = max(alpha) if alpha else 0
    top = last if not np.isfinite(kq) else min(int(kq), last + 1)
    fails = []
    checked = 0
    for i in range(1, top):
        if i in T and i + 1 in alpha:
            checked += 1
            if not T[i] <= alpha[i + 1]:
                fails.append(("lower", i))
        if i + 1 in istar and istar[i + 1] in T and i in alpha:
            checked += 1
            if not alpha[i] <= T[istar[i + 1]]:
                fails.append(("upper", i))
    return {"checked": checked, "failures": fails}


# ---------------------------------------------------------------------------
# relabelling and counts


@dataclass
class Relabeled:
    position: dict      # label i -> position in the record
    times: dict         # label i -> time
    kappa_plus: float   # kappa*(Q) (may be +inf)
    kappa_minus: float  # kappa*(-Q) (may be -inf)


def relabel_S(rec: RenewalRecord, Q: float, times: np.ndarray | None = None) -> Relabeled:
    """Shift labels so that S_0 <= 0 < S_1 and evaluate kappa*(+-Q).

    kappa*(Q) = inf{i >= 0: S_i > Q} and kappa*(-Q) = sup{i <= 0: S_i < -Q},
    with inf of the empty set +inf and sup of the empty set -inf.
    """
    t = rec.times if times is None else np.asarray(times, dtype=float)
    if len(t) == 0:
        raise ValueError("empty record")
    first_pos = int(np.searchsorted(t, 0.0, side="right"))
    pos = {k - first_pos + 1: k for k in range(len(t))}
    tt = {i: float(t[k]) for i, k in pos.items()}
    kp = [i for i in sorted(tt) if i >= 0 and tt[i] > Q]
    km = [i for i in sorted(tt) if i <= 0 and tt[i] < -Q]
    return Relabeled(pos, tt, float(kp[0]) if kp else math.inf, float(km[-1]) if km else -math.inf)


# ---------------------------------------------------------------------------
# closed-form laws

_EPS_TERM = 1e-14
_SMALL = 0.25   # x / h^2 below which the image series is used


def _series(term, kmax=100_000):
    total = np.zeros_like(term(0))
    comp = np.zeros_like(total)
    for k in range(kmax):
        t = term(k)
        y = t - comp
        s = total + y
        comp = (s - total) - y
        total = s
        if np.all(np.abs(t) < _EPS_TERM):
            break
    return total


@dataclass
class RenewalLaws:
    h: float

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("laws are defined for x > 0")
        return x

    # inter-arrival time
    def interarrival_pdf(self, x):
        x = self._check(x)
        h2 = self.h**2
        small = x < _SMALL * h2
        out = np.empty_like(x)
        xs, xl = x[small], x[~small]
        a = math.pi**2 / (8 * h2)
        out[~small] = _series(lambda k: (math.pi / 2) * (-1) ** k * (2 * k + 1) / h2
                              * np.exp(-(2 * k + 1) ** 2 * a * xl))
        # image-charge form of the same density, fast for small x
        out[small] = _series(lambda k: 2 * (-1) ** k * (2 * k + 1) * self.h / np.sqrt(2 * math.pi * xs**3)
                             * np.exp(-((2 * k + 1) * self.h) ** 2 / (2 * xs)))
        return out

    def interarrival_sf(self, x):
        x = self._check(x)
        h2 = self.h**2
        small = x < _SMALL * h2
        out = np.empty_like(x)
        xs, xl = x[small], x[~small]
        a = math.pi**2 / (8 * h2)
        out[~small] = _series(lambda k: (4 / math.pi) * (-1) ** k / (2 * k + 1)
                              * np.exp(-(2 * k + 1) ** 2 * a * xl))
        out[small] = 1 - _series(lambda k: 2 * (-1) ** k * erfc((2 * k + 1) * self.h / np.sqrt(2 * xs)))
        return out

    def interarrival_cdf(self, x):
        return 1 - self.interarrival_sf(x)

    # residual life S_1
    def residual_pdf(self, x):
        return self.interarrival_sf(x) / self.h**2

    def residual_cdf(self, x):
        x = self._check(x)
        h2 = self.h**2
        small = x < _SMALL * h2
        out = np.empty_like(x)
        xs, xl = x[small], x[~small]
        a = math.pi**2 / (8 * h2)
        out[~small] = 1 - _series(lambda k: (32 / math.pi**3) * (-1) ** k / (2 * k + 1) ** 3
                                  * np.exp(-(2 * k + 1) ** 2 * a * xl))

        def int_cdf(k):
            # closed form of int_0^x erfc(c / sqrt(2 s)) ds
            c2 = ((2 * k + 1) * self.h) ** 2 / 2
            c = math.sqrt(c2)
            return 2 * (-1) ** k * ((xs + 2 * c2) * erfc(c / np.sqrt(xs))
                                    - 2 * c * np.sqrt(xs / math.pi) * np.exp(-c2 / xs))

        out[small] = (xs - _series(int_cdf)) / h2
        return out

    @staticmethod
    def _lt(lam):
        return np.asarray(lam, dtype=float)

    def interarrival_laplace(self, lam):
        lam = self._lt(lam)
        return 1 / np.cosh(self.h * np.sqrt(2 * lam))

    def residual_laplace(self, lam):
        lam = self._lt(lam)
        s = self.h * np.sqrt(2 * lam)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = (1 - 1 / np.cosh(s)) / (self.h**2 * lam)
        # (1 - sech s)/(h^2 lam) = 2 (1 - sech s)/s^2 -> 1 as s -> 0
        small = s < 1e-4
        return np.where(small, 1 - 5 * s**2 / 12, val)

    def mean_interarrival(self):
        return self.h**2

    def sample_interarrival(self, size, rng):
        """Inverse-CDF sampling on a fine table (used for self-consistency checks)."""
        u = rng.uniform(size=size)
        grid = np.geomspace(1e-4 * self.h**2, 40 * self.h**2, 20_000)
        cdf = self.interarrival_cdf(grid)
        return np.interp(u, cdf, grid)


def theoretical_laws(h: float) -> RenewalLaws:
    if h <= 0:
        raise ValueError("h must be positive")
    return RenewalLaws(float(h))


def empirical_law_test(samples, cdf, laplace=None, lambdas=(0.5, 1.0, 2.0), n_boot: int = 200,
                       seed: int = 0) -> dict:
    """KS test of ``samples`` against ``cdf`` plus an empirical Laplace table.

    ``laplace`` (optional) gives the theoretical transform at ``lambdas``;
    bootstrap percentile intervals accompany the empirical values.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 1000:
        raise ValueError("need at least 10^3 samples")
    ks = stats.kstest(x, cdf)
    rng = np.random.default_rng(seed)
    table = []
    for lam in lambdas:
        e = np.exp(-lam * x)
        boots = [e[rng.integers(0, len(e), len(e))].mean() for _ in range(n_boot)]
        row = {"lambda": lam, "empirical": float(e.mean()),
               "ci": [float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5))]}
        if laplace is not None:
            th = float(laplace(lam))
            row["theory"] = th
            row["rel_err"] = abs(row["empirical"] - th) / th
        table.append(row)
    return {"ks": float(ks.statistic), "p": float(ks.pvalue), "n": len(x), "laplace": table}


def renewal_count_check(records, R_grid, V: float, fstar: float, g_value: float,
                        gamma_over_delta: float, Q: float | None = None) -> dict:
    """Empirical satisfied-fraction of the renewal-count bounds.

    For each record and R, kappa*(R) (first label with time > R) is compared
    with 2 + (4 V+^2 / F*^2) R log(R^2 g), V+ = V (1 + (gamma/delta*)^(1/5)).
    """
    if len(records) < 1000:
        raise ValueError("need at least 10^3 records")
    vplus = V * (1 + gamma_over_delta ** 0.2)
    out = []
    for R in R_grid:
        bound = 2 + 4 * vplus**2 / fstar**2 * R * math.log(R**2 * g_value)
        ks = np.array([relabel_S(r, R).kappa_plus for r in records])
        fin = np.isfinite(ks)
        counts = []
        for r in records:
            t = r.times[r.certified]
            counts.append(np.sum((t > 0) & (t <= R)))
        row = {"R": R, "bound": bound, "satisfied_fraction": float(np.mean(ks[fin] <= bound)) if fin.any() else None,
               "finite_fraction": float(fin.mean()), "mean_count": float(np.mean(counts))}
        if Q is not None:
            row["KQ"] = 2 + 5 * V / fstar**2 * Q * math.log(Q**2 * g_value)
        out.append(row)
    return {"rows": out, "V_plus": vplus}


# ---------------------------------------------------------------------------
# Brownian pipelines

# E[max of Brownian motion] - E[max on a grid of step dt] ~ BGK_BETA * sqrt(dt)
BGK_BETA = -float(zeta(0.5)) / math.sqrt(2 * math.pi)


def grid_threshold(h: float, dt: float, corrected: bool = True) -> float:
    """Threshold to use on a dt-grid so its h-extrema mimic the continuous ones.

    A grid path under-reads both the maximum and the minimum of the
    underlying Brownian path, so an observed drop of h is on average a true
    drop of h + 2 BGK_BETA sqrt(dt).
    """
    if not corrected:
        return h
    hg = h - 2 * BGK_BETA * math.sqrt(dt)
    if hg <= 0:
        raise ValueError("dt too coarse for this h")
    return hg


def bbm_interarrivals(h: float, dt: float, n_target: int, seed: int, T_path: float | None = None,
                      corrected: bool = True):
    """Certified inter-arrival times of h-extrema of sampled Brownian paths.

    Independent one-sided paths of length T_path are processed until
    ``n_target`` gaps are collected; the gap ending at the first certified
    extremum of each path is dropped so every kept gap is bracketed by two
    certified points.
    """
    rng = np.random.default_rng(seed)
    hg = grid_threshold(h, dt, corrected)
    T_path = T_path or 400 * h * h
    n = int(round(T_path / dt))
    out = []
    total = 0
    while total < n_target:
        v = np.empty(n + 1)
        v[0] = 0.0
        np.cumsum(rng.standard_normal(n), out=v[1:])
        v[1:] *= math.sqrt(dt)
        idx, lab, _ = _drawdown(v, hg, 0)
        if len(idx) > 1:
            gaps = np.diff(idx[1:]) * dt if len(idx) > 2 else np.empty(0)
            out.append(gaps)
            total += len(gaps)
    return np.concatenate(out)


def bbm_residuals(h: float, dt: float, n_target: int, seed: int, spacing: float | None = None,
                  burn: float | None = None, T_path: float | None = None, corrected: bool = True):
    """Residual lives S_1 seen from origins spaced along long Brownian paths.

    The extrema are computed on the whole path (a far-left origin), origins
    start ``burn`` after the left end and stop once no certified extremum is
    left ahead.  Spacing several h^2 keeps the samples nearly independent.
    """
    rng = np.random.default_rng(seed)
    hg = grid_threshold(h, dt, corrected)
    h2 = h * h
    spacing = spacing or 8 * h2
    burn = burn or 16 * h2
    T_path = T_path or 400 * h2
    n = int(round(T_path / dt))
    out = []
    total = 0
    while total < n_target:
        v = np.empty(n + 1)
        v[0] = 0.0
        np.cumsum(rng.standard_normal(n), out=v[1:])
        v[1:] *= math.sqrt(dt)
        idx, lab, _ = _drawdown(v, hg, 0)
        if len(idx) < 3:
            continue
        ex = idx[1:]   # certified points (the first one is dropped)
        origins = np.arange(burn, T_path - burn, spacing)
        oi = np.round(origins / dt).astype(np.int64)
        k = np.searchsorted(ex, oi, side="right")
        ok = (k < len(ex)) & (k > 0)
        s1 = (ex[k[ok]] - oi[ok]) * dt
        out.append(s1)
        total += len(s1)
    return np.concatenate(out)


def bbm_residuals_bilateral(h: float, dt: float, n_target: int, seed: int, r0: float | None = None,
                            corrected: bool = True):
    """S_1 from independent bilateral paths on [-r0, r0], one sample per path.

    Extrema are computed from the far-left end, so the skeleton has
    forgotten its start by the time it reaches the origin when r0 is several
    h^2 (default 16 h^2).
    """
    rng = np.random.default_rng(seed)
    hg = grid_threshold(h, dt, corrected)
    r0 = r0 or 16 * h * h
    out = []
    while len(out) < n_target:
        W = sample_bbm(r0, dt, rng=rng)
        idx, lab, _ = _drawdown(W.values, hg, 0)
        ex = idx[1:]
        k = np.searchsorted(ex, W.origin, side="right")
        if 0 < k < len(ex):
            out.append((ex[k] - W.origin) * dt)
    return np.asarray(out)


def dt_halving_study(h: float, dt0: float, levels: int, n_target: int, seed: int,
                     corrected: bool = True) -> list[dict]:
    """Inter-arrival mean at dt0, dt0/2, ...: bias against h^2 with its
    standard error, to show how the grid bias shrinks."""
    rows = []
    for k in range(levels):
        dt = dt0 / 2**k
        x = bbm_interarrivals(h, dt, n_target, seed + k, corrected=corrected)
        m, se = float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))
        rows.append({"dt": dt, "n": len(x), "mean": m, "bias": m - h * h, "se": se})
    return rows


# ---------------------------------------------------------------------------
# serialisation


def write_record_csv(path, rec: RenewalRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "time", "value", "label", "certified"])
        for i, t, x, l, c in zip(rec.indices, rec.times, rec.values, rec.labels, rec.certified):
            w.writerow([int(i), repr(float(t)), repr(float(x)), "max" if l == MAX else "min", int(c)])


def write_law_table(path, law: RenewalLaws, xs, which: str = "interarrival") -> None:
    xs = np.asarray(xs, dtype=float)
    pdf = law.interarrival_pdf(xs) if which == "interarrival" else law.residual_pdf(xs)
    cdf = law.interarrival_cdf(xs) if which == "interarrival" else law.residual_cdf(xs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "pdf", "cdf"])
        for a, p, c in zip(xs, pdf, cdf):
            w.writerow([repr(float(a)), repr(float(p)), repr(float(c))])
