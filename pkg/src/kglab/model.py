"""Klein-Gordon symbols p = tau^2 - q0 + q on T*(R x S^1).

A symbol here is anything with a ``jet(t, x, tau, xi)`` method returning a
:class:`Jet` (value and the four first partials), vectorised over numpy
arrays.  Fiber polynomials with DSL coefficients get exact jets; the escape
observables in :mod:`kglab.escape` provide hand-derived ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import symdsl
from .symdsl import Expr

TWO_PI = 2.0 * math.pi

# c_jk multiplies tau^j xi^k
COEFF_KEYS = ("c00", "c10", "c01", "c20", "c11", "c02")
_KEY_POWERS = {k: (int(k[1]), int(k[2])) for k in COEFF_KEYS}


@dataclass(frozen=True)
class PhasePoint:
    t: float
    x: float
    tau: float
    xi: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x) % TWO_PI)

    def astuple(self):
        return (self.t, self.x, self.tau, self.xi)


class Jet(NamedTuple):
    value: np.ndarray
    dt: np.ndarray
    dx: np.ndarray
    dtau: np.ndarray
    dxi: np.ndarray


# ------------------------------------------------------------------ symbols

class Symbol:
    """Base class; subclasses implement ``jet``."""

    def jet(self, t, x, tau, xi) -> Jet:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, t, x, tau, xi):
        return self.jet(t, x, tau, xi).value

    def __add__(self, other: "Symbol") -> "Symbol":
        return SumSymbol(self, other)

    def __mul__(self, other: "Symbol") -> "Symbol":
        return ProductSymbol(self, other)

    def scaled(self, c: float) -> "Symbol":
        return ScaledSymbol(self, c)


class SumSymbol(Symbol):
    def __init__(self, a: Symbol, b: Symbol):
        self.a, self.b = a, b

    def jet(self, t, x, tau, xi):
        ja, jb = self.a.jet(t, x, tau, xi), self.b.jet(t, x, tau, xi)
        return Jet(*(u + v for u, v in zip(ja, jb)))


class ProductSymbol(Symbol):
    def __init__(self, a: Symbol, b: Symbol):
        self.a, self.b = a, b

    def jet(self, t, x, tau, xi):
        ja, jb = self.a.jet(t, x, tau, xi), self.b.jet(t, x, tau, xi)
        va, vb = ja.value, jb.value
        return Jet(va * vb, *(da * vb + va * db for da, db in zip(ja[1:], jb[1:])))


class ScaledSymbol(Symbol):
    def __init__(self, a: Symbol, c: float):
        self.a, self.c = a, c

    def jet(self, t, x, tau, xi):
        return Jet(*(self.c * u for u in self.a.jet(t, x, tau, xi)))


class Coordinate(Symbol):
    """One of the canonical coordinates as a symbol."""

    NAMES = ("t", "x", "tau", "xi")

    def __init__(self, name: str):
        self.index = self.NAMES.index(name)

    def jet(self, t, x, tau, xi):
        args = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, x, tau, xi)))
        zero = np.zeros_like(args[0])
        grads = [zero] * 4
        grads[self.index] = np.ones_like(zero)
        return Jet(args[self.index], *grads)


class _Coef:
    """A compiled DSL coefficient with its first t/x derivatives."""

    __slots__ = ("expr", "f", "ft", "fx", "const")

    def __init__(self, expr: Expr):
        self.expr = expr
        self.const = symdsl.constant_value(expr)
        self.f = symdsl.compile_expr(expr)
        self.ft = symdsl.compile_expr(symdsl.diff(expr, "t"))
        self.fx = symdsl.compile_expr(symdsl.diff(expr, "x"))

    def values(self, t, x):
        if self.const is not None:
            return self.const, 0.0, 0.0
        return self.f(t, x), self.ft(t, x), self.fx(t, x)


class FiberPolynomial(Symbol):
    """sum_{j,k} a_jk(t, x) tau^j xi^k with exact jets."""

    def __init__(self, coeffs: dict):
        self.coeffs = {jk: e for jk, e in coeffs.items() if not symdsl.is_zero(e)}
        self._compiled = [(j, k, _Coef(e)) for (j, k), e in sorted(self.coeffs.items())]

    def jet(self, t, x, tau, xi):
        t, x, tau, xi = (np.asarray(a, dtype=float) for a in (t, x, tau, xi))
        v = dt = dx = dtau = dxi = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            for j, k, c in self._compiled:
                a, at, ax = c.values(t, x)
                mono = tau ** j * xi ** k
                v = v + a * mono
                dt = dt + at * mono
                dx = dx + ax * mono
                if j:
                    dtau = dtau + j * a * tau ** (j - 1) * xi ** k
                if k:
                    dxi = dxi + k * a * tau ** j * xi ** (k - 1)
        shape = np.broadcast(t, x, tau, xi).shape
        return Jet(*(np.broadcast_to(np.asarray(u, dtype=float), shape) for u in (v, dt, dx, dtau, dxi)))

    def value(self, t, x, tau, xi):
        return self.jet(t, x, tau, xi).value


def poisson_jets(ja: Jet, jb: Jet):
    """{a,b} = a_tau b_t + a_xi b_x - a_t b_tau - a_x b_xi."""
    return ja.dtau * jb.dt + ja.dxi * jb.dx - ja.dt * jb.dtau - ja.dx * jb.dxi


def poisson(a: Symbol, b: Symbol, pt) -> float:
    """Poisson bracket {a, b} at a :class:`PhasePoint` or a (t, x, tau, xi) tuple of arrays."""
    args = pt.astuple() if isinstance(pt, PhasePoint) else pt
    val = poisson_jets(a.jet(*args), b.jet(*args))
    if not np.all(np.isfinite(val)):
        raise ArithmeticError("non-finite Poisson bracket")
    return float(val) if np.ndim(val) == 0 else val


def fd_jet(sym: Symbol, t, x, tau, xi, step: float = 1e-4) -> Jet:
    """Fourth-order finite-difference jet (an oracle independent of ``sym.jet``)."""
    base = [np.asarray(a, dtype=float) for a in (t, x, tau, xi)]
    grads = []
    for i in range(4):
        def f(d):
            args = list(base)
            args[i] = args[i] + d
            return sym(*args)
        grads.append((-f(2 * step) + 8 * f(step) - 8 * f(-step) + f(-2 * step)) / (12 * step))
    return Jet(sym(*base), *grads)


# ------------------------------------------------------------------ model

@dataclass(frozen=True)
class MetricS1:
    g: Expr

    def __post_init__(self):
        if symdsl.depends_on(self.g, "t"):
            raise ValueError("metric.g must depend on x only")
        xs = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        vals = symdsl.evaluate(self.g, 0.0, xs)
        if np.min(vals) <= 0.0:
            raise ValueError(f"metric.g not positive: min {np.min(vals):.3e} "
                             f"at x={xs[np.argmin(vals)]:.6f}")
        gap = abs(symdsl.evaluate(self.g, 0.0, 0.0) - symdsl.evaluate(self.g, 0.0, TWO_PI))
        if gap > 1e-12:
            raise ValueError(f"metric.g not 2pi-periodic: |g(0)-g(2pi)| = {gap:.3e}")

    @property
    def inverse(self) -> Expr:
        return symdsl.div(symdsl.ONE, self.g)

    def is_flat(self) -> bool:
        return symdsl.constant_value(self.g) == 1.0


@dataclass(frozen=True)
class FiberQuadratic:
    coeffs: tuple  # Expr per COEFF_KEYS entry
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("q.mu must be > 0")
        if len(self.coeffs) != len(COEFF_KEYS):
            raise ValueError("need one coefficient per monomial")

    def as_dict(self) -> dict:
        return dict(zip(COEFF_KEYS, self.coeffs))

    def nonzero(self):
        return {k: e for k, e in self.as_dict().items() if not symdsl.is_zero(e)}


@dataclass(frozen=True)
class SpacetimeModel:
    metric: MetricS1
    q: FiberQuadratic
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def mu(self) -> float:
        return self.q.mu

    @classmethod
    def from_strings(cls, g: str = "1", mu: float = 1.0, **coeffs: str) -> "SpacetimeModel":
        unknown = set(coeffs) - set(COEFF_KEYS)
        if unknown:
            raise ValueError(f"unknown coefficient keys {sorted(unknown)}")
        exprs = tuple(symdsl.parse(coeffs.get(k, "0")) for k in COEFF_KEYS)
        return cls(MetricS1(symdsl.parse(g)), FiberQuadratic(exprs, float(mu)))

    @classmethod
    def flat(cls, mu: float = 1.0) -> "SpacetimeModel":
        return cls.from_strings("1", mu)

    def _poly(self, key: str, with_tau2: bool, with_q0: int) -> FiberPolynomial:
        if key not in self._cache:
            coeffs = {_KEY_POWERS[k]: e for k, e in self.q.as_dict().items()}
            if with_tau2:
                coeffs[(2, 0)] = symdsl.add(symdsl.ONE, coeffs[(2, 0)])
            if with_q0:
                coeffs[(0, 2)] = symdsl.add(coeffs[(0, 2)],
                                            symdsl.mul(symdsl.Const(float(with_q0)), self.metric.inverse))
            self._cache[key] = FiberPolynomial(coeffs)
        return self._cache[key]

    @property
    def p(self) -> FiberPolynomial:
        """The full symbol tau^2 - q0 + q."""
        return self._poly("p", True, -1)

    @property
    def kinetic(self) -> FiberPolynomial:
        """tau^2 + q (the part of p that does not commute with Q0)."""
        return self._poly("kin", True, 0)

    @property
    def q_symbol(self) -> FiberPolynomial:
        return self._poly("q", False, 0)

    @property
    def q0(self) -> FiberPolynomial:
        if "q0" not in self._cache:
            self._cache["q0"] = FiberPolynomial({(0, 2): self.metric.inverse})
        return self._cache["q0"]

    def fiber_form(self, t, x):
        """Coefficients (A, B, C) of p's principal part A tau^2 + B tau xi + C xi^2."""
        d = self.q.as_dict()
        ev = lambda e: symdsl.evaluate(e, t, x)  # noqa: E731
        A = 1.0 + ev(d["c20"])
        B = ev(d["c11"])
        C = ev(d["c02"]) - ev(self.metric.inverse)
        return A, B, C

    def x_independent(self) -> bool:
        return all(not symdsl.depends_on(e, "x") for e in self.q.coeffs)


def _args(pt):
    return pt.astuple() if isinstance(pt, PhasePoint) else pt


def eval_p(m: SpacetimeModel, pt) -> float:
    val = m.p.jet(*_args(pt)).value
    if not np.all(np.isfinite(val)):
        raise ArithmeticError("non-finite symbol value")
    return float(val) if np.ndim(val) == 0 else val


def grad_p(m: SpacetimeModel, pt):
    """(dp/dt, dp/dx, dp/dtau, dp/dxi)."""
    j = m.p.jet(*_args(pt))
    out = tuple(float(u) if np.ndim(u) == 0 else u for u in j[1:])
    if not all(np.all(np.isfinite(u)) for u in out):
        raise ArithmeticError("non-finite symbol gradient")
    return out


# ------------------------------------------------------------- assumption checks

@dataclass
class SampleSpec:
    t_max: float = 1e3
    n_t: int = 241        # per sign, logarithmic over [1, t_max]
    n_x: int = 64


@dataclass
class DecayEntry:
    coefficient: str
    kt: int
    kx: int
    sup: float
    decade_sups: list
    passed: bool


@dataclass
class DecayReport:
    mu: float
    max_order: int
    entries: list
    passed: bool
    note: str = ("finitely many derivative orders checked; the assumption "
                 "requires every order")

    def to_dict(self):
        return {
            "mu": self.mu, "max_order": self.max_order, "passed": self.passed,
            "note": self.note,
            "entries": [vars(e) for e in self.entries],
        }


def check_decay(m: SpacetimeModel, max_order: int = 2, sample: SampleSpec | None = None,
                rtol: float = 1e-9) -> DecayReport:
    """Weighted suprema <t>^{1+mu} |d_t^k d_x^a c_jk| per coefficient and order.

    An entry passes iff its suprema over the decades of |t| ending at
    ``sample.t_max`` are finite and non-increasing (relative slack ``rtol``).
    """
    sample = sample or SampleSpec()
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    mags = np.logspace(0.0, math.log10(sample.t_max), sample.n_t)
    ts = np.concatenate([[0.0], mags, -mags])
    xs = np.linspace(0.0, TWO_PI, sample.n_x, endpoint=False)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    weight = (1.0 + T ** 2) ** ((1.0 + m.mu) / 2.0)
    edges = np.logspace(math.log10(sample.t_max) - 3, math.log10(sample.t_max), 4)
    absT = np.abs(T)
    entries = []
    for name, expr in m.q.as_dict().items():
        for kt in range(max_order + 1):
            for kx in range(max_order + 1 - kt):
                d = expr
                for _ in range(kt):
                    d = symdsl.diff(d, "t")
                for _ in range(kx):
                    d = symdsl.diff(d, "x")
                vals = np.abs(np.broadcast_to(symdsl.evaluate(d, T, X), T.shape)) * weight
                sup = float(np.max(vals))
                decades = []
                for lo, hi in zip(edges[:-1], edges[1:]):
                    mask = (absT >= lo) & (absT <= hi)
                    decades.append(float(np.max(vals[mask])))
                ok = bool(np.all(np.isfinite(decades)) and all(
                    b <= a * (1 + rtol) + 1e-300 for a, b in zip(decades[:-1], decades[1:])))
                entries.append(DecayEntry(name, kt, kx, sup, decades, ok))
    return DecayReport(m.mu, max_order, entries, all(e.passed for e in entries))


@dataclass
class NondegeneracyReport:
    min_discriminant: float
    argmin: list          # [t, x]
    passed: bool


def check_nondegeneracy(m: SpacetimeModel, t_samples=None, n_x: int = 64) -> NondegeneracyReport:
    """Signature (1,1) of the fiber form: discriminant B^2 - 4AC > 0, strictly."""
    if t_samples is None:
        mags = np.logspace(-3, 3, 121)
        t_samples = np.concatenate([[0.0], mags, -mags, np.linspace(-10, 10, 201)])
    xs = np.linspace(0.0, TWO_PI, n_x, endpoint=False)
    T, X = np.meshgrid(np.asarray(t_samples, float), xs, indexing="ij")
    A, B, C = (np.broadcast_to(v, T.shape) for v in m.fiber_form(T, X))
    disc = B ** 2 - 4.0 * A * C
    i = np.unravel_index(np.argmin(disc), disc.shape)
    dmin = float(disc[i])
    return NondegeneracyReport(dmin, [float(T[i]), float(X[i])], bool(dmin > 0.0))


def check_asymptotic(m: SpacetimeModel, decay: DecayReport, t_abs: float = 1e3,
                     n: int = 64) -> dict:
    """|q| <= 2 C <t>^{-1-mu}(1+tau^2+xi^2) at |t| = t_abs, C from the decay suprema."""
    C = sum(e.sup for e in decay.entries if e.kt == 0 and e.kx == 0)
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, TWO_PI, n)
    taus = rng.uniform(-3, 3, n)
    xis = rng.uniform(-3, 3, n)
    worst = 0.0
    for t in (t_abs, -t_abs):
        qv = np.abs(m.q_symbol.value(t, xs, taus, xis))
        bound = 2.0 * C * (1.0 + t * t) ** (-(1.0 + m.mu) / 2.0) * (1.0 + taus ** 2 + xis ** 2)
        worst = max(worst, float(np.max(qv - bound)))
    return {"t_abs": t_abs, "C": C, "max_excess": worst, "passed": worst <= 0.0}
