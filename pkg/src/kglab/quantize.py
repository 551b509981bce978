"""Grid discretization of X = R x S^1 and Weyl quantization of fiber-quadratic symbols.

Conventions
-----------
* t_j = -L + (j + 1/2) dt with dt = 2L/N_t (Dirichlet outside), x_k = 2 pi k/N_x.
* Grid functions are arrays of shape (N_t, N_x); flattening is row-major (t outer).
* D = -i d.  In t, d is the 4th-order central difference (truncated at the
  ends, so the matrix is exactly antisymmetric); in x it is the Fourier
  derivative with the Nyquist mode set to zero (again antisymmetric).
* Weyl rules, for a(t, x):
    a tau^2   -> D_t a D_t - a_tt/4
    a tau xi  -> (D_t a D_x + D_x a D_t)/2 - a_tx/4
    a xi^2    -> D_x a D_x - a_xx/4
    a tau     -> (a D_t + D_t a)/2,  a xi likewise,  a -> a.
* ``assemble`` returns h^2 P so that symbols sit at unit fiber scale.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import erfc

from . import symdsl
from .cutoffs import chi1, chi2
from .escape import EscapeParams, _lam
from .model import TWO_PI, MetricS1, PhasePoint, SpacetimeModel


def _pow2(n: int) -> bool:
    return n >= 16 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    L: float
    N_t: int
    N_x: int
    boundary: str = "Dirichlet"

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError("grid.L must be positive")
        for name in ("N_t", "N_x"):
            if not _pow2(int(getattr(self, name))):
                raise ValueError(f"grid.{name} must be a power of two >= 16")
        if self.boundary != "Dirichlet":
            raise ValueError("only Dirichlet truncation in t is supported")

    @property
    def dt(self) -> float:
        return 2.0 * self.L / self.N_t

    @property
    def dx(self) -> float:
        return TWO_PI / self.N_x

    @property
    def t(self) -> np.ndarray:
        return -self.L + (np.arange(self.N_t) + 0.5) * self.dt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N_x) * self.dx

    @property
    def shape(self):
        return (self.N_t, self.N_x)

    @property
    def size(self) -> int:
        return self.N_t * self.N_x

    @property
    def cell(self) -> float:
        return self.dt * self.dx

    def mesh(self):
        return np.meshgrid(self.t, self.x, indexing="ij")

    def check_escape(self, ep: EscapeParams):
        if self.L < 4.0 * ep.T:
            raise ValueError(f"grid.L={self.L} must be >= 4*escape.T={4 * ep.T}")

    def to_dict(self):
        return {"L": self.L, "N_t": self.N_t, "N_x": self.N_x}


# -- grid functions -----------------------------------------------------------

def inner(grid: GridSpec, u, v) -> complex:
    """<u, v>, antilinear in the first slot."""
    return complex(np.vdot(np.ravel(u), np.ravel(v)) * grid.cell)


def norm(grid: GridSpec, u) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell))


def save_grid_function(path, grid: GridSpec, h: float, u):
    """Little-endian f64 (re, im) pairs, row-major, plus a JSON sidecar."""
    path = Path(path)
    u = np.asarray(u, dtype=np.complex128).reshape(grid.shape)
    inter = np.empty(u.size * 2, dtype="<f8")
    inter[0::2] = u.real.ravel()
    inter[1::2] = u.imag.ravel()
    path.write_bytes(inter.tobytes())
    meta = {**grid.to_dict(), "h": h}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True))


def load_grid_function(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = GridSpec(meta["L"], meta["N_t"], meta["N_x"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    u = (raw[0::2] + 1j * raw[1::2]).reshape(grid.shape)
    return grid, meta["h"], u


# -- derivative matrices ------------------------------------------------------

_FD4 = {-2: 1.0 / 12, -1: -8.0 / 12, 1: 8.0 / 12, 2: -1.0 / 12}


def fd4_first(n: int, step: float) -> sp.csr_matrix:
    """4th-order d/dt with zero (Dirichlet) values outside the grid."""
    diags = [np.full(n - abs(o), c / step) for o, c in _FD4.items()]
    return sp.diags(diags, list(_FD4), shape=(n, n), format="csr")


def fourier_wavenumbers(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    k[n // 2] = 0.0  # Nyquist has no real antisymmetric derivative
    return k


def spectral_first(n: int) -> np.ndarray:
    """Dense real antisymmetric Fourier d/dx on n periodic points over [0, 2 pi)."""
    k = fourier_wavenumbers(n)
    eye = np.eye(n)
    K = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0))
    return 0.5 * (K - K.T)


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    grid: GridSpec
    h: float
    symmetric: bool
    meta: dict = field(default_factory=dict)

    def apply(self, u):
        return (self.matrix @ np.ravel(u)).reshape(self.grid.shape)

    def asymmetry(self) -> float:
        """max |A - A^H| entry."""
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix.data) or not np.any(self.matrix.data.imag)


def _derivs(grid: GridSpec):
    It, Ix = sp.identity(grid.N_t, format="csr"), sp.identity(grid.N_x, format="csr")
    Gt = sp.kron(fd4_first(grid.N_t, grid.dt), Ix, format="csr")
    Kx = sp.kron(It, sp.csr_matrix(spectral_first(grid.N_x)), format="csr")
    return Gt, Kx


def _sample(e, T, X, what):
    v = np.broadcast_to(np.asarray(symdsl.evaluate(e, T, X), dtype=float), T.shape).ravel()
    if not np.all(np.isfinite(v)):
        i = int(np.flatnonzero(~np.isfinite(v))[0])
        raise ValueError(f"non-finite {what} at (t, x) = ({T.ravel()[i]}, {X.ravel()[i]})")
    return v


def weyl_term(expr, j: int, k: int, grid: GridSpec, derivs=None) -> sp.csr_matrix:
    """Matrix of Op^w(a(t,x) tau^j xi^k) for j + k <= 2 (D = -i d)."""
    if j + k > 2:
        raise ValueError("fiber degree > 2")
    T, X = grid.mesh()
    Gt, Kx = derivs or _derivs(grid)
    a = sp.diags(_sample(expr, T, X, f"coefficient tau^{j} xi^{k}"))
    D = {"t": Gt, "x": Kx}

    def corr(v1, v2):
        return sp.diags(0.25 * _sample(symdsl.diff(symdsl.diff(expr, v1), v2), T, X, "coefficient derivative"))

    if (j, k) == (0, 0):
        return sp.csr_matrix(a)
    if j + k == 1:
        d = D["t" if j else "x"]
        return sp.csr_matrix(-0.5j * (a @ d + d @ a))
    if (j, k) in ((2, 0), (0, 2)):
        v = "t" if j else "x"
        d = D[v]
        return sp.csr_matrix(-(d @ a @ d) - corr(v, v))
    # (1, 1): D_t a D_x = -Gt a Kx
    return sp.csr_matrix(-0.5 * (Gt @ a @ Kx + Kx @ a @ Gt) - corr("t", "x"))


def assemble(m: SpacetimeModel, grid: GridSpec, h: float = 1.0) -> SparseOperator:
    """h^2 P with P = Op^w(p), p = tau^2 - q0 + q."""
    if not (0 < h <= 1):
        raise ValueError("h must lie in (0, 1]")
    derivs = _derivs(grid)
    A = sp.csr_matrix((grid.size, grid.size), dtype=complex)
    for (j, k), e in sorted(m.p.coeffs.items()):
        A = A + weyl_term(e, j, k, grid, derivs)
    A = (h * h) * A
    A.sum_duplicates()
    A.eliminate_zeros()
    if not np.any(A.data.imag):
        A = sp.csr_matrix(A.real)
    return SparseOperator(A, grid, h, symmetric=True, meta={"model": "h^2 P"})


# -- Q0 block and its functional calculus ----------------------------------

def q0_block(metric: MetricS1, N_x: int) -> np.ndarray:
    """Op^w(xi^2/g) on one t-slice (real symmetric N_x x N_x)."""
    x = np.arange(N_x) * (TWO_PI / N_x)
    K = spectral_first(N_x)
    ginv = metric.inverse
    gv = np.broadcast_to(symdsl.evaluate(ginv, 0.0, x), x.shape)
    gxx = np.broadcast_to(symdsl.evaluate(symdsl.diff(symdsl.diff(ginv, "x"), "x"), 0.0, x), x.shape)
    Q = K.T @ (gv[:, None] * K) - np.diag(0.25 * gxx)
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True)
class Q0Eigen:
    mu: np.ndarray
    V: np.ndarray          # orthonormal columns (Euclidean)
    block: np.ndarray


def q0_eigen(metric: MetricS1, N_x: int) -> Q0Eigen:
    Q = q0_block(metric, N_x)
    mu, V = np.linalg.eigh(Q)
    return Q0Eigen(mu, V, Q)


def _lam_clamped(ep: EscapeParams, t):
    """lambda(t) with |t| < 1 slices taking the value at |t| = 1."""
    return _lam(ep, t)[0]


def q0_calculus(grid: GridSpec, h: float, ep: EscapeParams, metric: MetricS1 | None = None,
                eig: Q0Eigen | None = None) -> SparseOperator:
    """Block-diagonal chi2((h^2 Q0 - 1)/lambda(t)) acting slice-wise in t."""
    eig = eig or q0_eigen(metric or MetricS1(symdsl.ONE), grid.N_x)
    lam = np.broadcast_to(_lam_clamped(ep, grid.t), grid.t.shape)
    blocks = []
    for lt in lam:
        f = chi2((h * h * eig.mu - 1.0) / lt)
        blocks.append((eig.V * f) @ eig.V.T)
    M = sp.block_diag(blocks, format="csr")
    return SparseOperator(M, grid, h, symmetric=True,
                          meta={"lambda_small_t": "constant extension from |t| = 1", "eig": eig})


def commutator_per_slice(op: SparseOperator, eig: Q0Eigen) -> np.ndarray:
    """max |[B_t, Q0]| entry for each t-slice."""
    n = op.grid.N_x
    out = np.empty(op.grid.N_t)
    for i in range(op.grid.N_t):
        B = op.matrix[i * n:(i + 1) * n, i * n:(i + 1) * n].toarray()
        out[i] = np.max(np.abs(B @ eig.block - eig.block @ B))
    return out


# -- weyl quadrature oracle ---------------------------------------------------

def weyl_quadrature_1d(a: Callable, power: int, t_eval, phi: Callable, s_window=(-12.0, 12.0), *,
                       n_s: int = 2001, tau_max: float = 40.0, n_tau: int = 2001) -> np.ndarray:
    """(1/2 pi) int int e^{i(t-s)tau} a((t+s)/2) tau^power phi(s) ds dtau, trapezoidal in (s, tau).

    Independent brute-force evaluation of the Weyl integral on R for a smooth
    phi that is negligible outside ``s_window``.
    """
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    s = np.linspace(s_window[0], s_window[1], n_s)
    tau = np.linspace(-tau_max, tau_max, n_tau)
    ws = np.full(n_s, s[1] - s[0]); ws[[0, -1]] *= 0.5
    wt = np.full(n_tau, tau[1] - tau[0]); wt[[0, -1]] *= 0.5
    E = np.exp(-1j * np.outer(s, tau))
    kern = (tau ** power) * wt / TWO_PI
    ps = phi(s) * ws
    out = np.empty(t_eval.size, dtype=complex)
    for i, t in enumerate(t_eval):
        F = (a(0.5 * (t + s)) * ps) @ E
        out[i] = (F * np.exp(1j * t * tau)) @ kern
    return out


# -- semiclassical multipliers ------------------------------------------------

@dataclass(frozen=True)
class SeparableTerm:
    u: Callable     # of t
    v: Callable     # of tau
    w: Callable     # of q0


@dataclass(frozen=True)
class SeparableSymbol:
    terms: tuple = ()
    label: str = ""

    @classmethod
    def one(cls):
        f = lambda s: np.ones_like(np.asarray(s, dtype=float))  # noqa: E731
        return cls((SeparableTerm(f, f, f),), "1")

    @classmethod
    def zero(cls):
        return cls((), "0")

    def __call__(self, t, tau, q0):
        return sum((tm.u(t) * tm.v(tau) * tm.w(q0) for tm in self.terms), 0.0 * np.asarray(t))


def symbol_a(delta: float, T: float) -> SeparableSymbol:
    """a(delta, T) = chi2(|tau^2-1|/delta) chi2(|q0-1|/delta) chi1(1-|t|/T)."""
    return SeparableSymbol((SeparableTerm(
        lambda t: chi1(1.0 - np.abs(t) / T),
        lambda tau: chi2(np.abs(tau ** 2 - 1.0) / delta),
        lambda q0: chi2(np.abs(q0 - 1.0) / delta)),), f"a(delta={delta}, T={T})")


def symbol_b0_frozen(ep: EscapeParams, t_freeze: float) -> SeparableSymbol:
    """b0 with lambda(t) frozen at t_freeze (makes it separable)."""
    lam = float(_lam(ep, t_freeze)[0])
    e = ep.gamma_w if ep.incoming else -ep.gamma_w
    terms = []
    for s in (1, -1):
        sz = -s if ep.incoming else s
        terms.append(SeparableTerm(
            (lambda t, sz=sz: np.maximum(np.abs(t), 1.0) ** e * chi1(-sz * np.asarray(t) / ep.T + 1.0)),
            (lambda tau, s=s: chi2((s * tau - 1.0) / lam)),
            (lambda q0: chi2((q0 - 1.0) / lam))))
    return SeparableSymbol(tuple(terms), f"b0[{ep.direction.value}] lambda={lam:g}")


def _t_multiplier(psi, v_vals_fn, grid: GridSpec, h: float):
    n = grid.N_t
    pad = np.zeros((2 * n, psi.shape[1]), dtype=complex)
    pad[:n] = psi
    k = TWO_PI * np.fft.fftfreq(2 * n, d=grid.dt)
    out = np.fft.ifft(v_vals_fn(h * k)[:, None] * np.fft.fft(pad, axis=0), axis=0)
    return out[:n]


def _x_multiplier(psi, w_fn, h: float, eig: Q0Eigen | None):
    if eig is None:
        k = fourier_wavenumbers(psi.shape[1])
        return np.fft.ifft(w_fn(h * h * k * k)[None, :] * np.fft.fft(psi, axis=1), axis=1)
    c = psi @ eig.V
    return (c * w_fn(h * h * eig.mu)[None, :]) @ eig.V.T


def op_h_multiplier(sym: SeparableSymbol, grid: GridSpec, h: float, psi, metric: MetricS1 | None = None,
                    eig: Q0Eigen | None = None) -> np.ndarray:
    """Op_h(sym) psi with ordering u^{1/2} v(hD_t) w(h^2 Q0) u^{1/2} per term."""
    if not isinstance(sym, SeparableSymbol):
        raise TypeError("symbol must be a SeparableSymbol (sum of u(t) v(tau) w(q0))")
    psi = np.asarray(psi, dtype=complex).reshape(grid.shape)
    if eig is None and metric is not None and not metric.is_flat():
        eig = q0_eigen(metric, grid.N_x)
    out = np.zeros(grid.shape, dtype=complex)
    t = grid.t
    for tm in sym.terms:
        uv = np.broadcast_to(np.asarray(tm.u(t), dtype=float), t.shape)
        if np.all(uv >= 0):
            r = np.sqrt(uv)[:, None]
            y = _x_multiplier(_t_multiplier(r * psi, tm.v, grid, h), tm.w, h, eig)
            out += r * y
        else:
            vw = lambda f: _x_multiplier(_t_multiplier(f, tm.v, grid, h), tm.w, h, eig)  # noqa: E731
            out += 0.5 * (uv[:, None] * vw(psi) + vw(uv[:, None] * psi))
    return out


# -- wave packets -------------------------------------------------------------

class PacketClipped(ValueError):
    pass


def periodic_dist(x, x0):
    return (np.asarray(x) - x0 + math.pi) % TWO_PI - math.pi


def wave_packet(grid: GridSpec, center, widths: Sequence[float], h: float) -> np.ndarray:
    t0, x0, tau0, xi0 = center.astuple() if isinstance(center, PhasePoint) else center
    st, sx = widths
    if not sx < math.pi / 3:
        raise ValueError("sigma_x must be < pi/3")
    # Gaussian |psi|^2 mass beyond the t-boundary
    clip = 0.5 * (erfc((grid.L - t0) / st) + erfc((grid.L + t0) / st))
    if clip > 1e-6 or grid.L - abs(t0) < 3 * st:
        raise PacketClipped(f"packet at t0={t0} (sigma_t={st}) clipped by boundary L={grid.L}: mass {clip:.2e}")
    T, X = grid.mesh()
    d = periodic_dist(X, x0)
    psi = np.exp(1j * ((T - t0) * tau0 + d * xi0) / h
                 - (T - t0) ** 2 / (2 * st * st) - d * d / (2 * sx * sx))
    return psi / norm(grid, psi)


def nyquist_mass(psi) -> float:
    """Largest fraction of |psi|^2 above 7/8 of the Nyquist frequency along either axis."""
    tot = np.sum(np.abs(psi) ** 2)
    out = 0.0
    for ax in (0, 1):
        n = psi.shape[ax]
        F = np.abs(np.fft.fft(psi, axis=ax)) ** 2
        k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        sel = k >= 7 * n / 16
        out = max(out, float(np.sum(np.compress(sel, F, axis=ax)) / (n * tot)))
    return out


def weyl_oracle_error(coef: str, power: int, grid: GridSpec, sigmas=(0.5, 0.8),
                      centers=(-1.0, 0.0, 1.0)) -> float:
    """Relative l2 error of the assembled t-block of Op^w(a(t) tau^power) against
    the quadrature oracle, over Gaussian test functions sampled on the grid."""
    expr = symdsl.parse(coef)
    n = grid.N_x
    M = weyl_term(expr, power, 0, grid).toarray()[0::n, 0::n]
    a = lambda u: symdsl.evaluate(expr, u, 0.0)  # noqa: E731
    t = grid.t
    err = ref = 0.0
    for s in sigmas:
        for c in centers:
            phi = lambda u, c=c, s=s: np.exp(-(u - c) ** 2 / (2 * s * s))  # noqa: E731
            o = weyl_quadrature_1d(a, power, t, phi, (c - 8 * s, c + 8 * s),
                                   n_s=801, tau_max=12 / s, n_tau=1601)
            err += float(np.sum(np.abs(M @ phi(t) - o) ** 2))
            ref += float(np.sum(np.abs(o) ** 2))
    return math.sqrt(err / ref)
