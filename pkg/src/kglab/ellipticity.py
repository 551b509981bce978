"""Ellipticity of p on supp[eta (1 - a)] for |t| large.

a(delta, T) = chi2(|tau^2 - 1|/delta) chi2(|q0 - 1|/delta) chi1(1 - |t|/T)
eta         = chi2((tau^2 + q0 - 2)/gamma_ell),   gamma_ell = delta/4
alpha       = delta/(4 + delta),  chosen so 2 gamma_ell + alpha (2 + 2 gamma_ell) = delta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cutoffs import chi1, chi2
from .escape import ScanReport
from .model import TWO_PI, PhasePoint, SpacetimeModel
from . import symdsl


@dataclass(frozen=True)
class EllipticityConstants:
    delta: float
    T: float = 20.0

    @property
    def gamma_ell(self) -> float:
        return self.delta / 4.0

    @property
    def alpha(self) -> float:
        return self.delta / (4.0 + self.delta)

    def identity_residual(self) -> float:
        g, a = self.gamma_ell, self.alpha
        return abs(2.0 * g + a * (2.0 + 2.0 * g) - self.delta)

    def identity_exact(self) -> bool:
        """The identity in exact rational arithmetic on the float delta."""
        d = Fraction(self.delta)
        g = d / 4
        a = d / (4 + d)
        return 2 * g + a * (2 + 2 * g) == d


def _args(pt):
    return pt.astuple() if isinstance(pt, PhasePoint) else pt


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def a_microlocal(c: EllipticityConstants, m: SpacetimeModel, pt):
    t, x, tau, xi = (np.asarray(v, dtype=float) for v in _args(pt))
    q0 = m.q0.value(t, x, tau, xi)
    val = (chi2(np.abs(tau ** 2 - 1.0) / c.delta) * chi2(np.abs(q0 - 1.0) / c.delta)
           * chi1(1.0 - np.abs(t) / c.T))
    return _scalar(val)


def eta(c: EllipticityConstants, m: SpacetimeModel, pt):
    t, x, tau, xi = (np.asarray(v, dtype=float) for v in _args(pt))
    q0 = m.q0.value(t, x, tau, xi)
    return _scalar(chi2((tau ** 2 + q0 - 2.0) / c.gamma_ell))


def find_T0(m: SpacetimeModel, delta: float, n_t: int = 241, n_x: int = 32, n_fib: int = 33):
    """Least sampled T in [1, 1e3] with |q| <= alpha (tau^2 + q0) for all sampled |t| >= T.

    Fibers are sampled over the box tau^2, q0 in [0, 4] (the eta support lies
    inside it).  Returns None when even T = 1e3 fails.
    """
    alpha = delta / (4.0 + delta)
    mags = np.logspace(0.0, 3.0, n_t)
    xs = np.linspace(0.0, TWO_PI, n_x, endpoint=False)
    u = np.linspace(0.0, 2.0, n_fib)
    TAU = np.concatenate([u, -u[1:]])
    g = np.broadcast_to(symdsl.evaluate(m.metric.g, 0.0, xs), xs.shape)
    X = xs[:, None, None]
    XI = np.concatenate([u, -u[1:]])[None, None, :] * np.sqrt(g)[:, None, None]
    TAUg = TAU[None, :, None]
    ok = np.zeros(n_t, dtype=bool)
    for i, T in enumerate(mags):
        good = True
        for t in (T, -T):
            qv = np.abs(m.q_symbol.value(t, X, TAUg, XI))
            rhs = alpha * (TAUg ** 2 + m.q0.value(t, X, TAUg, XI))
            if np.any(qv > rhs + 1e-15):
                good = False
                break
        ok[i] = good
    # suffix property: every larger sampled |t| passes as well
    suffix = np.flip(np.logical_and.accumulate(np.flip(ok)))
    idx = np.flatnonzero(suffix)
    return float(mags[idx[0]]) if idx.size else None


class PreconditionError(ValueError):
    pass


def _fiber_samples(delta: float, res: int):
    """(tau^2, q0) pairs covering the eta band tau^2 + q0 in [2 - 2g, 2 + 2g].

    Each family fixes one coordinate on a grid that contains the values
    1 +- delta (just outside the flat region of a) and sweeps the band sum.
    """
    gam = delta / 4.0
    eps = delta * 1e-6
    fixed = np.unique(np.concatenate([
        np.linspace(0.0, 2.0 + 2.0 * gam, res),
        [1.0 - delta - eps, 1.0 + delta + eps, 1.0 - 2 * delta, 1.0 + 2 * delta],
    ]))
    sums = np.linspace(2.0 - 2.0 * gam, 2.0 + 2.0 * gam, res)
    A = np.repeat(fixed, sums.size)
    B = np.tile(sums, fixed.size) - A
    ok = (B >= 0.0) & (B <= 4.0)
    U = np.concatenate([A[ok], B[ok]])
    Q = np.concatenate([B[ok], A[ok]])
    return U, Q


def appendix_scan(m: SpacetimeModel, delta: float, T: float, res: int = 48,
                  T_box_factor: float = 8.0) -> ScanReport:
    """Grid minimum of |p| over supp[eta (1 - a)] in the flat region |t| >= 2T of a.

    PASS iff min |p| >= delta (1 - 1e-6).  Points in the band T <= |t| < 2T
    are scanned too and reported separately (``band``): there the t-factor of
    a is below one, so 1 - a > 0 even on Char(P).
    """
    c = EllipticityConstants(delta, T)
    T0 = find_T0(m, delta)
    if T0 is None:
        raise PreconditionError(f"T0 search failed: q decays too slowly for delta={delta}")
    if T < T0:
        raise PreconditionError(f"T={T} below T0={T0}")
    half = res // 2
    Tb = T_box_factor * T
    ts_main = np.concatenate([np.linspace(-Tb, -2 * T, half), np.linspace(2 * T, Tb, half)])
    ts_band = np.concatenate([np.linspace(-2 * T, -T, half, endpoint=False)[1:],
                              np.linspace(T, 2 * T, half, endpoint=False)[1:]])
    # x is irrelevant when neither g nor q depends on it
    xs = np.zeros(1) if m.x_independent() and m.metric.is_flat() else np.linspace(0.0, TWO_PI, res, endpoint=False)
    U, Q = _fiber_samples(delta, res)
    g = np.broadcast_to(symdsl.evaluate(m.metric.g, 0.0, xs), xs.shape)[:, None]
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    TAU = np.concatenate([s0 * np.sqrt(U) for s0, _ in signs])[None, :] * np.ones_like(g)
    XI = np.concatenate([s1 * np.sqrt(Q) for _, s1 in signs])[None, :] * np.sqrt(g)
    X = np.broadcast_to(xs[:, None], TAU.shape)

    def scan(ts):
        best, arg, n_kept = math.inf, None, 0
        est1 = est2 = 0.0
        est3_bad = chain_bad = 0
        for t in ts:
            Tt = np.full(X.shape, t)
            pt = (Tt, X, TAU, XI)
            keep = (eta(c, m, pt) > 0) & (a_microlocal(c, m, pt) < 1.0 - 1e-12)
            if not np.any(keep):
                continue
            n_kept += int(np.count_nonzero(keep))
            pv = np.abs(m.p.value(*pt))[keep]
            q0 = m.q0.value(*pt)[keep]
            tau2 = TAU[keep] ** 2
            qv = np.abs(m.q_symbol.value(*pt))[keep]
            est1 = max(est1, float(np.max(np.abs(tau2 + q0 - 2.0) - 2 * c.gamma_ell)))
            if abs(t) >= T0:
                est2 = max(est2, float(np.max(qv - c.alpha * (2 + 2 * c.gamma_ell))))
            d_tau, d_q = np.abs(tau2 - 1.0), np.abs(q0 - 1.0)
            case_ok = (d_tau >= delta) | (d_q >= delta)
            est3_bad += int(np.count_nonzero(~case_ok))
            # |p| >= 2|.-1| - delta, whichever case applies
            lower = np.maximum(np.where(d_tau >= delta, 2 * d_tau - delta, -np.inf),
                               np.where(d_q >= delta, 2 * d_q - delta, -np.inf))
            if abs(t) >= T0:
                chain_bad += int(np.count_nonzero(case_ok & (pv < lower - 1e-12)))
            i = int(np.argmin(pv))
            if pv[i] < best:
                best = float(pv[i])
                arg = [float(t), float(X[keep][i]), float(TAU[keep][i]), float(XI[keep][i])]
        return best, arg, n_kept, est1, est2, est3_bad, chain_bad

    best, arg, n_kept, est1, est2, est3_bad, chain_bad = scan(ts_main)
    band_min, band_arg = scan(ts_band)[:2]
    case = None
    if arg is not None:
        tau2 = arg[2] ** 2
        case = "tau" if abs(tau2 - 1.0) >= delta else "q0"
    passed = bool(arg is not None and best >= delta * (1 - 1e-6) and est1 <= 1e-12
                  and est2 <= 1e-12 and est3_bad == 0 and chain_bad == 0)
    extra = {
        "T0": T0, "case_at_argmin": case,
        "gamma_ell": c.gamma_ell, "alpha": c.alpha, "identity_residual": c.identity_residual(),
        "n_retained": n_kept, "scanned_t_region": [2 * T, Tb],
        "est1_max_excess": est1, "est2_max_excess": est2,
        "est3_violations": est3_bad, "chain_violations": chain_bad,
        "band": {"t_region": [T, 2 * T], "min_abs_p": band_min, "argmin": band_arg},
        "reproducer": f"model.eval_p(model, PhasePoint(*{arg}))",
    }
    return ScanReport({"delta": delta, "T": T}, None, res, best, arg, passed, [], extra)


@dataclass
class RegionWeights:
    incoming: float       # symbol of Pi^-
    outgoing: float       # symbol of Pi^+
    label: str = field(default="Neither")


def region_classify(pt, T: float) -> RegionWeights:
    """Pi^- symbol z1^-(t) z5^+(tau) + z1^+(t) z5^-(tau), Pi^+ with z5 signs swapped."""
    t, _, tau, _ = _args(pt)
    z1m = chi1(t / T + 1.0)
    z1p = chi1(-t / T + 1.0)
    z5p = chi1(1.0 - tau)
    z5m = chi1(1.0 + tau)
    w_in = float(z1m * z5p + z1p * z5m)
    w_out = float(z1m * z5m + z1p * z5p)
    label = "Neither"
    if w_in > 0.5 and w_in >= w_out:
        label = "Incoming"
    elif w_out > 0.5:
        label = "Outgoing"
    return RegionWeights(w_in, w_out, label)


def char_distance(m: SpacetimeModel, pt):
    """|p| / (tau^2 + q0); zero exactly on Char(P)."""
    t, x, tau, xi = _args(pt)
    den = np.asarray(m.q0.value(t, x, tau, xi) + np.asarray(tau, float) ** 2)
    if np.any(den == 0.0):
        raise ValueError("zero covector")
    return _scalar(np.abs(m.p.value(t, x, tau, xi)) / den)
