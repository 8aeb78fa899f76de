"""Model parameters and the derived multi-scale schedule."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

from . import mean_field as mf

GSpec = Literal["log", "iterated_log", "identity_capped"]

__all__ = ["ModelParams", "Schedule", "Verdict", "g_function", "derive_schedule",
           "validate_schedule", "ADVISORY"]


def g_function(family: str, x: float, cap: float = 1e12) -> float:
    """The slowly varying function g evaluated at x."""
    if x <= 0:
        raise ValueError("g is defined for x > 0")
    if family == "log":
        return max(1.0, math.log(x))
    if family == "iterated_log":
        return max(1.0, math.log(max(1.0, math.log(x))))
    if family == "identity_capped":
        return max(1.0, min(x, cap))
    raise ValueError(f"unknown g family {family!r}")


@dataclass(frozen=True)
class ModelParams:
    beta: float
    theta: float
    gamma: float
    d_star: float = 0.25
    a: float = 1.0
    b_exp: float = 0.05
    g_spec: GSpec = "log"
    g_cap: float = 1e12
    # unspecified constants of the construction, all defaulting to 1
    c_R2: float = 1.0
    c_L: float = 1.0
    c_zeta5: float = 1.0
    c_4_12009: float = 1.0
    alpha_zeta51: float = 1.0
    p_rough: int = 1
    interval_length: float | None = None   # |I| for the max-p check, default 2Q/gamma

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.d_star < 0.5:
            raise ValueError("d_star must lie in (0, 1/2)")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0 < self.b_exp < 1 / (8 + 4 * self.a):
            raise ValueError("b_exp must lie in (0, 1/(8+4a))")
        if self.g_spec not in ("log", "iterated_log", "identity_capped"):
            raise ValueError(f"unknown g family {self.g_spec!r}")
        if int(self.p_rough) != self.p_rough or self.p_rough < 1:
            raise ValueError("p_rough must be a positive integer")

    def g(self, x: float) -> float:
        return g_function(self.g_spec, x, self.g_cap)


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    lhs: float
    rhs: float
    slack: float
    advisory: bool = False
    note: str = ""


ADVISORY = frozenset({"4.12009", "zeta51"})


@dataclass(frozen=True)
class Schedule:
    gamma: float
    gamma_requested: float
    delta_star: float
    delta_star_raw: float
    block_sites: int          # delta*/gamma
    g_value: float
    kappa: float
    zeta0: float
    delta: float
    zeta: float
    zeta5: float
    rho: float
    epsilon: float
    R2: float
    Q: float
    L1: float
    fQ: float
    KQ: float
    L_cut: float
    fstar: float
    V: float
    b_elong: float
    f_excess: float
    h: float
    m_beta: tuple = ()
    notes: tuple = ()
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, verdicts=None, **kw) -> str:
        d = self.to_dict()
        if verdicts is not None:
            d["verdicts"] = [asdict(v) for v in verdicts]
        return json.dumps(d, default=float, **kw)


def _round_gamma(gamma: float) -> int:
    """Exponent n of the dyadic 2^-n within 10% of gamma, preferring smaller gamma."""
    x = -math.log2(gamma)
    for n in sorted({math.floor(x), math.ceil(x)}, reverse=True):
        if n >= 1 and abs(2.0**-n - gamma) <= 0.1 * gamma:
            return n
    raise ValueError(f"no dyadic gamma within 10% of {gamma}")


def _dyadic_below(x: float) -> float:
    return 2.0 ** math.floor(math.log2(x))


def derive_schedule(p: ModelParams, fstar: float, v: float, overrides: dict | None = None) -> Schedule:
    """All derived scales for the model ``p`` with surface tension ``fstar``
    and field strength ``v``.

    ``overrides`` may replace any Schedule field after derivation (used to
    probe the validation report); overridden names are recorded in notes.
    """
    if not fstar > 0:
        raise ValueError("surface tension must be positive (h = 2F*/V undefined)")
    if not v > 0:
        raise ValueError("field strength must be positive")
    notes = []
    n = _round_gamma(p.gamma)
    gamma = 2.0**-n
    if gamma != p.gamma:
        notes.append(f"gamma rounded from {p.gamma!r} to 2^-{n}")
    ds_raw = gamma ** (0.5 + p.d_star)
    # delta*/gamma = 2^k with k >= 1, rounded up (larger block)
    k = max(1, math.ceil(math.log2(ds_raw / gamma) - 1e-12))
    ds = gamma * 2.0**k
    if ds >= 1:
        raise ValueError("gamma too large: block scale reaches the macro unit")
    x = ds / gamma
    g = p.g(x)
    kappa, _ = mf.kappa_estimate(p.beta, p.theta)
    mb = mf.equilibrium_magnetization(p.beta, p.theta)
    zeta0 = mb.m_tilde / 4

    delta_raw = 1 / (5 * math.sqrt(g))
    delta = min(_dyadic_below(delta_raw), 0.5)
    if delta < 2 * ds:
        delta = 2 * ds
        notes.append("delta raised to 2 delta*")
    eps_raw = (5 / g) ** 4
    eps = _dyadic_below(eps_raw) if eps_raw < 1 else 1.0
    if eps < gamma * ds:
        eps = gamma * ds
        notes.append("epsilon raised to gamma delta*")

    lg = math.log(g) if g > 1 else 0.0
    llg = math.log(lg) if lg > 1 else float("nan")
    Q = math.exp(lg / llg) if lg > 1 else float("nan")
    if not math.isfinite(Q):
        notes.append("Q undefined: g <= e")
    if math.isfinite(Q) and Q > 1 and math.log(Q) > 0:
        lq = math.log(Q)
        fQ = math.exp((1 / (8 + 4 * p.a) - p.b_exp) * lq * math.log(lq)) if lq > 1 else 1.0
    else:
        fQ = float("nan")
    KQ = 2 + 5 * (v / fstar**2) * Q * math.log(Q * Q * g) if math.isfinite(Q) else float("nan")
    L_cut = p.c_L * math.log(Q * Q * g) if math.isfinite(Q) else float("nan")

    s = Schedule(
        gamma=gamma, gamma_requested=p.gamma, delta_star=ds, delta_star_raw=ds_raw,
        block_sites=int(round(x)), g_value=g, kappa=kappa, zeta0=zeta0,
        delta=delta, zeta=2 / (kappa ** (1 / 3) * g ** (1 / 6)),
        zeta5=1 / (2**18 * p.c_zeta5**6 * g**3),
        rho=(5 / g) ** (1 / (2 + p.a)), epsilon=eps, R2=p.c_R2 * g**3.5,
        Q=Q, L1=g**9.5, fQ=fQ, KQ=KQ, L_cut=L_cut, fstar=fstar, V=v,
        b_elong=2 * fstar, f_excess=5 / g, h=2 * fstar / v,
        m_beta=(mb.m1, mb.m2), notes=tuple(notes), params=asdict(p),
    )
    if overrides:
        s = replace(s, **overrides, notes=s.notes + (f"overridden: {sorted(overrides)}",))
    return s


def _c_t(bt: float) -> float:
    t = math.tanh(2 * bt)
    return t * t * (1 + t * t) ** 2 / ((1 - t * t) ** 2 * (1 - t) ** 6)


def _verdict(name, lhs, rhs, advisory=False, note="", strict=False) -> Verdict:
    ok = lhs < rhs if strict else lhs <= rhs
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        ok = False
        note = (note + "; " if note else "") + "not finite"
    return Verdict(name, bool(ok), float(lhs), float(rhs), float(rhs - lhs), advisory, note)


def validate_schedule(s: Schedule, p: ModelParams) -> list[Verdict]:
    """Evaluate every constraint of the schedule; a report, never a gate.

    Each verdict stores both sides of its inequality written as lhs <= rhs.
    """
    beta, theta = p.beta, p.theta
    gam, ds, g = s.gamma, s.delta_star, s.g_value
    x = ds / gam
    e3 = math.e**3
    out = []
    out.append(_verdict("TE.2", ds**2 / gam * g**1.5, 1 / (beta * s.kappa * e3 * 2**13)))
    lg = math.log(g) if g > 1 else 0.0
    llg = math.log(lg) if lg > 1 else float("nan")
    out.append(_verdict("MTE.2", math.sqrt(2 * gam / ds) * (math.log(1 / (gam * ds)) + lg / llg), 1 / 32))
    out.append(_verdict("4.00510", 12 * (1 + p.p_rough) * ds * math.log(1 / gam), 1.0))
    lower = 1 / (s.kappa ** (1 / 3) * g ** (1 / 6))
    te1_low = _verdict("TE.1", lower, s.zeta, strict=True)
    te1_up = _verdict("TE.1", s.zeta, s.zeta0)
    out.append(Verdict("TE.1", te1_low.passed and te1_up.passed, s.zeta, s.zeta0,
                       min(te1_low.slack, te1_up.slack), False,
                       f"needs {lower:.6g} < zeta={s.zeta:.6g} <= zeta0={s.zeta0:.6g}"))
    cbt = _c_t(beta * theta)
    c = p.c_4_12009
    rhs12 = max(5184 * (1 + cbt) ** 2 * math.sqrt(gam / ds), (12 * e3 * beta / c * ds**2 / gam) ** 2)
    out.append(_verdict("4.12009", rhs12, s.zeta, advisory=True,
                        note=f"second constant set to {c}"))
    rhs51 = (384 * (1 + s.zeta * gam / ds + theta) / (s.kappa * p.alpha_zeta51)
             * math.sqrt(gam / ds) * math.log(x))
    out.append(_verdict("zeta51", rhs51, s.delta * s.zeta5**3, advisory=True,
                        note=f"alpha set to {p.alpha_zeta51}"))
    I = p.interval_length if p.interval_length is not None else 2 * s.Q / gam
    out.append(_verdict("Newone", math.sqrt(2 * gam / ds) * math.log(I / ds), 1 / 32))
    out.append(_verdict("H.2201", ds**2 / gam, 1 / (6 * e3 * beta)))
    return out


def mandatory_ok(verdicts) -> bool:
    return all(v.passed for v in verdicts if not v.advisory)
