"""Microscopic Ising chain with Kac interaction and a random +-1 field."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import logsumexp

__all__ = ["SpinConfig", "KacKernel", "hamiltonian", "boundary_energy", "local_fields",
           "boundary_fields", "gibbs_sample", "SampleStream", "exact_partition",
           "integrated_autocorr", "random_fields", "state_index", "MAX_EXACT_SITES"]

MAX_EXACT_SITES = 20


@dataclass
class SpinConfig:
    """Spins and field values on the sites start, start+1, ..., start+n-1."""

    spins: np.ndarray
    fields: np.ndarray
    start: int = 0

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=np.int8)
        self.fields = np.asarray(self.fields, dtype=np.int8)
        if self.spins.shape != self.fields.shape or self.spins.ndim != 1:
            raise ValueError("spins and fields must be 1-d arrays of the same length")
        for name, a in (("spins", self.spins), ("fields", self.fields)):
            if a.size and not np.all(np.abs(a) == 1):
                raise ValueError(f"{name} must be +-1")

    def __len__(self):
        return len(self.spins)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self.spins))

    def with_spins(self, spins) -> "SpinConfig":
        return SpinConfig(np.asarray(spins, dtype=np.int8), self.fields, self.start)

    def flipped(self) -> "SpinConfig":
        return SpinConfig(-self.spins, -self.fields, self.start)


def random_fields(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)


@dataclass(frozen=True)
class KacKernel:
    """J_gamma(i - j) = gamma when gamma |i - j| <= 1/2, else 0."""

    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def range(self) -> int:
        # largest integer d with gamma d <= 1/2
        return int(math.floor(0.5 / self.gamma + 1e-12))

    def __call__(self, d):
        d = np.abs(np.asarray(d))
        return np.where(d <= self.range, self.gamma, 0.0)

    def total_mass(self) -> float:
        return self.gamma * (2 * self.range + 1)


def _window_sums(s: np.ndarray, R: int) -> np.ndarray:
    """sum of s[j] over |i - j| <= R, j inside the array (integer exact)."""
    c = np.concatenate([[0], np.cumsum(s.astype(np.int64))])
    n = len(s)
    i = np.arange(n)
    hi = np.minimum(i + R + 1, n)
    lo = np.maximum(i - R, 0)
    return c[hi] - c[lo]


def hamiltonian(c: SpinConfig, theta: float, kernel: KacKernel) -> float:
    """Free-boundary energy, self term included."""
    if len(c) == 0:
        return 0.0
    s = c.spins.astype(np.int64)
    pair = int(np.dot(s, _window_sums(s, kernel.range)))
    return -0.5 * kernel.gamma * pair - theta * float(np.dot(c.fields.astype(np.int64), s))


def boundary_fields(c: SpinConfig, outside: SpinConfig | None, kernel: KacKernel) -> np.ndarray:
    """Integer sum of outside spins within range of each site of c (sites of c excluded)."""
    n = len(c)
    if outside is None or len(outside) == 0 or n == 0:
        return np.zeros(n, dtype=np.int64)
    R = kernel.range
    o = outside.spins.astype(np.int64).copy()
    osites = outside.sites
    inside = (osites >= c.start) & (osites < c.start + n)
    o[inside] = 0
    cs = np.concatenate([[0], np.cumsum(o)])
    i = c.sites
    lo = np.clip(i - R - outside.start, 0, len(o))
    hi = np.clip(i + R + 1 - outside.start, 0, len(o))
    return cs[hi] - cs[lo]


def boundary_energy(c: SpinConfig, outside: SpinConfig, kernel: KacKernel) -> float:
    """Interaction of the spins of c with the spins of ``outside`` lying off c."""
    b = boundary_fields(c, outside, kernel)
    return -kernel.gamma * float(np.dot(c.spins.astype(np.int64), b))


def local_fields(c: SpinConfig, theta: float, kernel: KacKernel, outside: SpinConfig | None = None) -> np.ndarray:
    """Field felt by each spin: gamma * (neighbour sum without self) + theta h_i."""
    s = c.spins.astype(np.int64)
    nb = _window_sums(s, kernel.range) - s + boundary_fields(c, outside, kernel)
    return kernel.gamma * nb + theta * c.fields


# ---------------------------------------------------------------------------
# sampler


@njit(cache=True)
def _fen_build(s):
    n = s.shape[0]
    t = np.zeros(n + 1, np.int64)
    for i in range(n):
        t[i + 1] += s[i]
        j = i + 1 + ((i + 1) & -(i + 1))
        if j <= n:
            t[j] += t[i + 1]
    return t


@njit(cache=True)
def _fen_prefix(t, k):
    # sum of the first k entries
    r = 0
    while k > 0:
        r += t[k]
        k -= k & -k
    return r


@njit(cache=True)
def _fen_add(t, i, d):
    k = i + 1
    n = t.shape[0] - 1
    while k <= n:
        t[k] += d
        k += k & -k


@njit(cache=True)
def _sweeps(s, h, bnd, beta, theta, gamma, R, order, unif, metropolis, tree, mags,
            out, nout, count0, thin):
    """Run len(order)//n sweeps in place; returns the number of accepted flips.

    After sweep w, if count0 + w + 1 is a positive multiple of thin and
    thin > 0, the state is copied into out[nout[0]].
    """
    n = s.shape[0]
    nsw = order.shape[0] // n
    acc = 0
    tot = 0
    for i in range(n):
        tot += s[i]
    for w in range(nsw):
        for q in range(n):
            i = order[w * n + q]
            lo = i - R
            if lo < 0:
                lo = 0
            hi = i + R + 1
            if hi > n:
                hi = n
            nb = _fen_prefix(tree, hi) - _fen_prefix(tree, lo) - s[i] + bnd[i]
            F = gamma * nb + theta * h[i]
            u = unif[w * n + q]
            if metropolis:
                dE = 2.0 * s[i] * F
                new = s[i]
                if dE <= 0 or u < math.exp(-beta * dE):
                    new = -s[i]
            else:
                # heat bath: P(+1) = 1 / (1 + exp(-2 beta F))
                x = -2.0 * beta * F
                if x > 50:
                    pplus = 0.0
                elif x < -50:
                    pplus = 1.0
                else:
                    pplus = 1.0 / (1.0 + math.exp(x))
                new = 1 if u < pplus else -1
            if new != s[i]:
                _fen_add(tree, i, new - s[i])
                tot += new - s[i]
                s[i] = new
                acc += 1
        mags[w] = tot / n
        c = count0 + w + 1
        if thin > 0 and c > 0 and c % thin == 0:
            for i in range(n):
                out[nout[0], i] = s[i]
            nout[0] += 1
    return acc


@dataclass
class SampleStream:
    samples: np.ndarray          # retained configurations, one row per sample
    magnetization: np.ndarray    # per sweep
    final: SpinConfig
    header: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"] + [f"s{i}" for i in range(self.samples.shape[1])])
            for k, row in enumerate(self.samples):
                w.writerow([k] + [int(x) for x in row])

    def write_npz(self, path) -> None:
        np.savez_compressed(path, samples=self.samples, magnetization=self.magnetization,
                            header=json.dumps(self.header))

    def write_header(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.header, fh, indent=2, default=float)


def integrated_autocorr(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 1.0
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau += 2 * acf[m]
        if m >= c * tau:
            break
    return float(max(tau, 1.0))


def gibbs_sample(c0: SpinConfig, beta: float, theta: float, kernel: KacKernel, sweeps: int,
                 rng_seed, burn_in: int = 100, thin: int = 10, outside: SpinConfig | None = None,
                 method: str = "heat-bath", keep: bool = True) -> SampleStream:
    """Single-site Gibbs sampling in a fresh random site order each sweep.

    ``sweeps`` counts retained sweeps after ``burn_in``; every ``thin``-th one
    is stored.  Window spin sums are kept in a Fenwick tree so each update
    costs O(log |Lambda|) regardless of the interaction range.
    """
    if sweeps < 1:
        raise ValueError("need at least one sweep")
    if method not in ("heat-bath", "metropolis"):
        raise ValueError(f"unknown method {method!r}")
    if thin < 1 or burn_in < 0:
        raise ValueError("thin must be >= 1 and burn_in >= 0")
    rng = np.random.default_rng(rng_seed)
    n = len(c0)
    s = c0.spins.astype(np.int64).copy()
    h = c0.fields.astype(np.int64)
    bnd = boundary_fields(c0, outside, kernel)
    tree = _fen_build(s)
    total = burn_in + sweeps
    mags = np.empty(total)
    out = np.empty((sweeps // thin if keep else 0, n), np.int8)
    nout = np.zeros(1, np.int64)
    acc = 0
    done = 0
    while done < total:
        # batch about 2^20 updates per kernel call
        k = max(1, min(total - done, (1 << 20) // max(n, 1)))
        if done < burn_in:
            k = min(k, burn_in - done)
        if k > 1:
            order = np.argsort(rng.random((k, n)), axis=1).astype(np.int64).ravel()
        else:
            order = rng.permutation(n).astype(np.int64)
        unif = rng.random(k * n)
        th = thin if (keep and done >= burn_in) else 0
        acc += _sweeps(s, h, bnd, beta, theta, kernel.gamma, kernel.range, order, unif,
                       method == "metropolis", tree, mags[done:done + k],
                       out, nout, done - burn_in, th)
        done += k
    samples = out[:nout[0]]
    post = mags[burn_in:]
    header = {"seed": rng_seed if isinstance(rng_seed, (int, type(None))) else str(rng_seed),
              "beta": beta, "theta": theta, "gamma": kernel.gamma, "sites": n,
              "burn_in": burn_in, "sweeps": sweeps, "thin": thin, "method": method,
              "flip_rate": acc / max(1, total * n),
              "tau_int_magnetization": integrated_autocorr(post) if len(post) > 3 else None}
    return SampleStream(samples, mags, SpinConfig(s.astype(np.int8), c0.fields, c0.start), header)


# ---------------------------------------------------------------------------
# exact enumeration


def exact_partition(c: SpinConfig, beta: float, theta: float, kernel: KacKernel,
                    boundary: SpinConfig | None = None):
    """log Z and the Gibbs probability of every state (free or fixed boundary).

    States are ordered as in itertools.product((-1, 1), repeat=n): the state
    index reads the spins as binary digits, site 0 most significant, with
    bit 1 meaning +1.
    """
    n = len(c)
    if n > MAX_EXACT_SITES:
        raise ValueError(f"exact enumeration limited to {MAX_EXACT_SITES} sites")
    if n == 0:
        return 0.0, np.ones(1)
    idx = np.arange(2**n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)) & 1
    conf = (2 * bits - 1).astype(np.int64)
    # pair sums with the self term are integers: conf J conf / gamma
    d = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    A = (d <= kernel.range).astype(np.int64)
    pair = np.einsum("si,ij,sj->s", conf, A, conf)
    field_term = conf @ c.fields.astype(np.int64)
    E = -0.5 * kernel.gamma * pair - theta * field_term
    if boundary is not None:
        b = boundary_fields(c, boundary, kernel)
        E = E - kernel.gamma * (conf @ b)
    lw = -beta * E
    logZ = float(logsumexp(lw))
    return logZ, np.exp(lw - logZ)


def state_index(spins: np.ndarray) -> np.ndarray:
    """Inverse of the enumeration order used by exact_partition (rows of spins)."""
    s = np.atleast_2d(spins)
    n = s.shape[1]
    w = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((s > 0).astype(np.int64) * w).sum(axis=1)
