"""Escape observables b0 and their positive-commutator gaps.

Incoming:  b0 = sum_{s=+-} |t|^g  z1^{-s}(t) z2^{s}(t, tau) z3(t, x, xi)
Outgoing:  b0 = sum_{s=+-} |t|^-g z1^{s}(t)  z2^{s}(t, tau) z3(t, x, xi)

with z1^s(t) = chi1(-s t/T + 1), z2^s = chi2((s tau - 1)/lam(t)),
z3 = chi2((q0 - 1)/lam(t)) and

    lam(t) = 2 delta - delta |t|^-nu   (incoming)
    lam(t) =   delta + delta |t|^-nu   (outgoing).

All jets are assembled by hand from the cutoff derivatives, so brackets are
exact up to rounding.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cutoffs import dchi1, dchi2
from .model import TWO_PI, Jet, PhasePoint, SpacetimeModel, Symbol, poisson_jets
from . import symdsl


class Direction(str, enum.Enum):
    INCOMING = "Incoming"
    OUTGOING = "Outgoing"


@dataclass(frozen=True)
class EscapeParams:
    delta: float
    nu: float
    gamma_w: float = 1.0
    T: float = 20.0
    direction: Direction = Direction.INCOMING

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 0.0 < self.delta < 0.25:
            raise ValueError(f"delta={self.delta} outside (0, 1/4)")
        if not self.nu > 0.0:
            raise ValueError("nu must be > 0")
        if not self.gamma_w > 0.0:
            raise ValueError("gamma_w must be > 0")
        if not self.T > 1.0:
            raise ValueError("T must exceed 1 (lambda is defined for |t| >= 1)")

    @property
    def incoming(self) -> bool:
        return self.direction is Direction.INCOMING

    def check_model(self, m: SpacetimeModel) -> None:
        if not self.nu < m.mu:
            raise ValueError(f"nu={self.nu} must be < mu={m.mu}")

    @property
    def lambda_max(self) -> float:
        return 2.0 * self.delta

    def to_dict(self):
        d = asdict(self)
        d["direction"] = self.direction.value
        return d


def lambda_weight(ep: EscapeParams, t):
    """lam(t) on |t| >= 1; raises outside that region."""
    a = np.abs(np.asarray(t, dtype=float))
    if np.any(a < 1.0):
        raise ValueError("lambda is defined only for |t| >= 1")
    return _lam(ep, t)[0] if np.ndim(t) else float(_lam(ep, t)[0])


def _lam(ep: EscapeParams, t):
    """(lam, lam') with |t| clamped to >= 1 (b0 vanishes there anyway)."""
    t = np.asarray(t, dtype=float)
    a = np.maximum(np.abs(t), 1.0)
    decay = ep.delta * a ** (-ep.nu)
    dlam = ep.nu * decay / a * np.sign(t)
    if ep.incoming:
        return 2.0 * ep.delta - decay, dlam
    return ep.delta + decay, -dlam


def _zeta1(ep: EscapeParams, s: int, t):
    u = -s * t / ep.T + 1.0
    return dchi1(u, 0), dchi1(u, 1) * (-s / ep.T)


@dataclass
class _Parts:
    """Per-summand factors and their derivatives (arrays)."""
    w: np.ndarray
    dw: np.ndarray
    z1: np.ndarray
    dz1: np.ndarray
    z2: np.ndarray
    dz2_t: np.ndarray
    dz2_tau: np.ndarray
    z3: np.ndarray
    dz3_t: np.ndarray
    dz3_x: np.ndarray
    dz3_xi: np.ndarray


def _summands(ep: EscapeParams, m: SpacetimeModel, t, x, tau, xi):
    t, x, tau, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, x, tau, xi)))
    lam, dlam = _lam(ep, t)
    a = np.maximum(np.abs(t), 1.0)
    e = ep.gamma_w if ep.incoming else -ep.gamma_w
    w = a ** e
    dw = e * np.sign(t) * a ** (e - 1.0)
    q0 = m.q0.jet(t, x, tau, xi)
    u3 = (q0.value - 1.0) / lam
    z3 = dchi2(u3, 0)
    d3 = dchi2(u3, 1)
    dz3_t = d3 * (-u3 * dlam / lam)
    dz3_x = d3 * q0.dx / lam
    dz3_xi = d3 * q0.dxi / lam
    out = {}
    for s in (1, -1):
        z1, dz1 = _zeta1(ep, -s if ep.incoming else s, t)
        u2 = (s * tau - 1.0) / lam
        z2 = dchi2(u2, 0)
        d2 = dchi2(u2, 1)
        out[s] = _Parts(w, dw, z1, dz1, z2, d2 * (-u2 * dlam / lam), d2 * s / lam,
                        z3, dz3_t, dz3_x, dz3_xi)
    return out


def b0_jet(ep: EscapeParams, m: SpacetimeModel, t, x, tau, xi) -> Jet:
    parts = _summands(ep, m, t, x, tau, xi)
    v = dt = dx = dtau = dxi = 0.0
    for P in parts.values():
        v = v + P.w * P.z1 * P.z2 * P.z3
        dt = dt + (P.dw * P.z1 * P.z2 * P.z3 + P.w * P.dz1 * P.z2 * P.z3
                   + P.w * P.z1 * P.dz2_t * P.z3 + P.w * P.z1 * P.z2 * P.dz3_t)
        dx = dx + P.w * P.z1 * P.z2 * P.dz3_x
        dtau = dtau + P.w * P.z1 * P.dz2_tau * P.z3
        dxi = dxi + P.w * P.z1 * P.z2 * P.dz3_xi
    return Jet(v, dt, dx, dtau, dxi)


class EscapeSymbol(Symbol):
    """b0 as a :class:`~kglab.model.Symbol` (usable with ``poisson``)."""

    def __init__(self, ep: EscapeParams, m: SpacetimeModel):
        self.ep, self.m = ep, m

    def jet(self, t, x, tau, xi):
        return b0_jet(self.ep, self.m, t, x, tau, xi)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def _args(pt):
    return pt.astuple() if isinstance(pt, PhasePoint) else pt


def b0(ep: EscapeParams, m: SpacetimeModel, pt):
    return _scalar(b0_jet(ep, m, *_args(pt)).value)


def tilde_f(ep: EscapeParams, m: SpacetimeModel, pt):
    """Compensator sum_s {tau^2+q, z1^s} z2^s z3 of the outgoing observable."""
    if ep.incoming:
        raise ValueError("tilde_f is defined for Outgoing parameters only")
    args = _args(pt)
    return _scalar(_tilde_f(ep, m, *args, kin=m.kinetic.jet(*args)))


def _tilde_f(ep, m, t, x, tau, xi, kin: Jet, parts=None):
    parts = parts or _summands(ep, m, t, x, tau, xi)
    total = 0.0
    for P in parts.values():
        # z1 depends on t only: {a, z1} = a_tau z1'
        total = total + kin.dtau * P.dz1 * P.z2 * P.z3
    return total


def _gap_arrays(ep, m, c0, t, x, tau, xi):
    kin = m.kinetic.jet(t, x, tau, xi)
    parts = _summands(ep, m, t, x, tau, xi)
    b = b0_jet(ep, m, t, x, tau, xi)
    bracket = poisson_jets(kin, b)
    a = np.maximum(np.abs(np.asarray(t, dtype=float)), 1.0)
    gap = -bracket - c0 * b.value / a
    ft = None
    if not ep.incoming:
        ft = _tilde_f(ep, m, t, x, tau, xi, kin, parts)
        gap = gap + ft
    return gap, b.value, ft


def bracket_gap(ep: EscapeParams, m: SpacetimeModel, c0: float, pt):
    """-{tau^2+q, b0} - c0 |t|^-1 b0, plus the compensator when outgoing."""
    gap, _, _ = _gap_arrays(ep, m, c0, *_args(pt))
    return _scalar(gap)


# ------------------------------------------------------------------ scans

@dataclass
class ScanReport:
    params: dict
    c0: float
    grid_res: int
    min_gap: float
    argmin: list
    passed: bool
    T_search_history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"params": self.params, "c0": self.c0, "grid_res": self.grid_res,
             "min_gap": self.min_gap, "argmin": self.argmin, "pass": self.passed,
             "T_search_history": self.T_search_history}
        d.update(self.extra)
        return d


def support_grid(ep: EscapeParams, m: SpacetimeModel, res: int, T_box_factor: float = 8.0):
    """Axes of the tensor grid covering the support box of b0.

    Returns (t values, x values, tau values, q0 values with xi signs) where
    xi is recovered per x as sign * sqrt(q0 g(x)).
    """
    half = res // 2
    Tb = T_box_factor * ep.T
    ts = np.concatenate([np.linspace(-Tb, -ep.T, half), np.linspace(ep.T, Tb, res - half)])
    xs = np.linspace(0.0, TWO_PI, res, endpoint=False)
    r = 2.0 * ep.lambda_max
    taus = np.concatenate([np.linspace(1 - r, 1 + r, half), np.linspace(-1 - r, -1 + r, res - half)])
    q0s = np.linspace(max(1 - r, 0.0), 1 + r, half)
    xi_q0 = np.concatenate([q0s, q0s])
    xi_sign = np.concatenate([np.ones(half), -np.ones(half)])
    return ts, xs, taus, (xi_q0, xi_sign)


def _xi_grid(m: SpacetimeModel, xs, xi_spec):
    q0s, signs = xi_spec
    g = np.broadcast_to(symdsl.evaluate(m.metric.g, 0.0, xs), xs.shape)
    return signs[None, :] * np.sqrt(q0s[None, :] * g[:, None])   # (n_x, n_xi)


def positivity_scan(ep: EscapeParams, m: SpacetimeModel, c0: float | None = None, res: int = 32,
                    T_box_factor: float = 8.0, tol: float = 1e-8) -> ScanReport:
    """Grid minimum of the bracket gap over the support box of b0."""
    if res < 16:
        raise ValueError("res must be >= 16")
    ep.check_model(m)
    c0 = ep.gamma_w if c0 is None else c0
    ts, xs, taus, xi_spec = support_grid(ep, m, res, T_box_factor)
    XI = _xi_grid(m, xs, xi_spec)
    X = np.broadcast_to(xs[:, None, None], (len(xs), len(taus), XI.shape[1]))
    TAU = np.broadcast_to(taus[None, :, None], X.shape)
    XIb = np.broadcast_to(XI[:, None, :], X.shape)
    best, arg = math.inf, None
    best_on = math.inf
    sign_violations = 0
    ft_outside = 0.0
    for t in ts:   # fixed order: deterministic reduction
        gap, bv, ft = _gap_arrays(ep, m, c0, np.full(X.shape, t), X, TAU, XIb)
        i = int(np.argmin(gap))
        if gap.flat[i] < best:
            best = float(gap.flat[i])
            arg = [float(t), float(X.flat[i]), float(TAU.flat[i]), float(XIb.flat[i])]
        pos = bv > 0
        if np.any(pos):
            best_on = min(best_on, float(np.min(gap[pos])))
        want = (t * TAU < 0) if ep.incoming else (t * TAU > 0)
        sign_violations += int(np.count_nonzero(pos & ~want))
        if ft is not None and not (ep.T <= abs(t) <= 2 * ep.T):
            ft_outside = max(ft_outside, float(np.max(np.abs(ft))))
    extra = {
        "support_sign_violations": sign_violations,
        "min_gap_on_support": best_on,
        "tail": (f"|t| > {T_box_factor}T not scanned; beyond the box every cutoff "
                 f"derivative in t vanishes or decays and the gap is bounded below "
                 f"analytically (tail marked analytic, not scanned)"),
        "T_box": T_box_factor * ep.T,
        "reproducer": f"escape.bracket_gap(params, model, {c0}, PhasePoint(*{arg}))",
    }
    if not ep.incoming:
        extra["tilde_f_max_outside_band"] = ft_outside
    return ScanReport(ep.to_dict(), c0, res, best, arg, bool(best >= -tol), [], extra)


def t_search(ep: EscapeParams, m: SpacetimeModel, c0: float | None = None, res: int = 32,
             T_start: float = 5.0, max_doublings: int = 10, **kw) -> ScanReport:
    """Double T from ``T_start`` until the scan passes; confirm at 2T."""
    history = []
    T = T_start
    for _ in range(max_doublings + 1):
        rep = positivity_scan(replace(ep, T=T), m, c0, res, **kw)
        history.append({"T": T, "min_gap": rep.min_gap, "pass": rep.passed})
        if rep.passed:
            confirm = positivity_scan(replace(ep, T=2 * T), m, c0, res, **kw)
            history.append({"T": 2 * T, "min_gap": confirm.min_gap, "pass": confirm.passed,
                            "certificate": True})
            rep.T_search_history = history
            rep.passed = rep.passed and confirm.passed
            rep.extra["T_found"] = T
            return rep
        T *= 2.0
    rep.T_search_history = history
    rep.extra["T_found"] = None
    return rep


# ----------------------------------------------------------------- ladder

class NestingError(ValueError):
    def __init__(self, level: int, point):
        super().__init__(f"support of level {level} not nested in level {level + 1} at {point}")
        self.level, self.point = level, point


def ladder(ep0: EscapeParams, J: int, m: SpacetimeModel | None = None, res: int = 24,
           T_threshold: float = 1.0):
    """Parameters delta_j = delta0 (1 + j/2J), T_j = T0 (1 - j/4J), j = 0..J, with nesting check.

    Raises ValueError on the precondition delta0 2^J < 1/4 and
    T0 2^-J > T_threshold, and :class:`NestingError` if some grid point of
    supp b0(delta_j, T_j) is not inside supp b0(delta_{j+1}, T_{j+1}).
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if not ep0.delta * 2 ** J < 0.25:
        raise ValueError(f"precondition delta0*2^J < 1/4 violated ({ep0.delta * 2 ** J:.3g})")
    if not ep0.T * 2.0 ** (-J) > T_threshold:
        raise ValueError(f"precondition T0*2^-J > {T_threshold} violated")
    m = m or SpacetimeModel.flat(mu=max(2 * ep0.nu, 1.0))
    levels = [replace(ep0, delta=ep0.delta * (1 + j / (2 * J)), T=ep0.T * (1 - j / (4 * J)))
              for j in range(J + 1)]
    for j in range(J):
        lo, hi = levels[j], levels[j + 1]
        ts, xs, taus, xi_spec = support_grid(lo, m, res)
        XI = _xi_grid(m, xs, xi_spec)
        X = np.broadcast_to(xs[:, None, None], (len(xs), len(taus), XI.shape[1]))
        TAU = np.broadcast_to(taus[None, :, None], X.shape)
        XIb = np.broadcast_to(XI[:, None, :], X.shape)
        for t in ts:
            Tt = np.full(X.shape, t)
            inner = _summands(lo, m, Tt, X, TAU, XIb)
            outer = _summands(hi, m, Tt, X, TAU, XIb)
            for s in (1, -1):
                P, Q = inner[s], outer[s]
                on = P.z1 * P.z2 * P.z3 > 0
                ok = (Q.z1 > 0) & (Q.z2 > 0) & (Q.z3 > 0)
                bad = on & ~ok
                if np.any(bad):
                    i = int(np.argmax(bad))
                    raise NestingError(j, [float(t), float(X.flat[i]), float(TAU.flat[i]),
                                           float(XIb.flat[i])])
    return levels
