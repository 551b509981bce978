"""Kernel probes for P* - z: singular values, the symmetric-form identity,
per-mode connection problems and semiclassical decay fits."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from . import symdsl
from .model import PhasePoint, SpacetimeModel
from .parallel import parallel_map
from .quantize import (GridSpec, PacketClipped, SeparableSymbol, SparseOperator, inner,
                       norm, nyquist_mass, op_h_multiplier, q0_eigen, wave_packet)

DENSE_LIMIT = 1024


def _matrix(A):
    return A.matrix if isinstance(A, SparseOperator) else A


@dataclass
class SigmaMin:
    sigma: float
    vector: np.ndarray
    method: str
    converged: bool = True


def sigma_min(A, z: complex, seed: int = 0, tol: float = 1e-12, maxiter: int = 5000) -> SigmaMin:
    """Smallest singular value of A - z I with a minimizing right singular vector."""
    M = _matrix(A)
    n = M.shape[0]
    if n <= DENSE_LIMIT:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M)
        _, s, vh = sla.svd(dense.astype(complex) - z * np.eye(n))
        return SigmaMin(float(s[-1]), vh[-1].conj(), "dense-svd")
    shifted = (sp.csc_matrix(M, dtype=complex) - z * sp.identity(n, format="csc"))
    lu = spla.splu(shifted)

    def inv_normal(b):
        # (M^H M)^{-1} b = M^{-1} M^{-H} b
        return lu.solve(lu.solve(np.asarray(b, dtype=complex), trans="H"))

    op = spla.LinearOperator((n, n), matvec=inv_normal, dtype=complex)
    v0 = np.random.default_rng(seed).standard_normal(n).astype(complex)
    try:
        vals, vecs = spla.eigsh(op, k=1, which="LM", v0=v0, tol=tol, maxiter=maxiter)
        ok = True
    except spla.ArpackNoConvergence as exc:  # report the partial answer
        vals, vecs, ok = exc.eigenvalues, exc.eigenvectors, False
        if len(vals) == 0:
            return SigmaMin(float("nan"), v0, "shift-invert", False)
    lam = float(np.real(vals[0]))
    return SigmaMin(1.0 / math.sqrt(lam), vecs[:, 0], "shift-invert", ok)


def symmetry_identity(A, phi, z: complex, grid: GridSpec | None = None) -> float:
    """|Im <phi, (A - z) phi> + Im z ||phi||^2|; zero for Hermitian A."""
    M = _matrix(A)
    grid = grid or (A.grid if isinstance(A, SparseOperator) else None)
    phi = np.ravel(np.asarray(phi, dtype=complex))
    r = M @ phi - z * phi
    if grid is not None:
        ip, nn = inner(grid, phi, r), norm(grid, phi) ** 2
    else:
        ip, nn = complex(np.vdot(phi, r)), float(np.vdot(phi, phi).real)
    return abs(ip.imag + z.imag * nn)


# -- mode connection ----------------------------------------------------------

@dataclass
class ModeConnection:
    m: int
    z: complex
    exponents: dict          # {"-inf": kappa with Re > 0, "+inf": kappa with Re < 0}
    W: float
    verdict: str             # PASS / FAIL / Undetermined
    L: float
    nfev: int = 0
    note: str = ""

    def to_dict(self):
        c = lambda k: [k.real, k.imag]  # noqa: E731
        return {"m": self.m, "z": [self.z.real, self.z.imag], "W": self.W, "L": self.L,
                "exponents": {k: c(v) for k, v in self.exponents.items()},
                "verdict": self.verdict, "note": self.note}


class ModelNotDecoupled(ValueError):
    pass


def _mode_coeffs(model: SpacetimeModel, m: int):
    if not model.metric.is_flat() or not model.x_independent():
        raise ModelNotDecoupled("mode decoupling needs a flat metric and x-independent q")
    d = model.q.as_dict()
    P = symdsl
    A = P.add(P.ONE, d["c20"])
    B = P.add(d["c10"], P.mul(P.Const(float(m)), d["c11"]))
    V = P.add(P.add(P.mul(P.Const(float(m * m)), P.sub(d["c02"], P.ONE)),
                    P.mul(P.Const(float(m)), d["c01"])), d["c00"])
    # Weyl corrections: -A''/4 from the tau^2 term, -(i/2) B' from the tau term
    exprs = {"A": A, "B": B, "V": V, "App": P.diff(P.diff(A, "t"), "t"), "Bp": P.diff(B, "t")}
    fns = [(k, P.constant_value(e), P.compile_expr(e)) for k, e in exprs.items()]

    def coef(t):
        return {k: (c if c is not None else float(f(t, 0.0))) for k, c, f in fns}
    return coef


def _local_roots(c, z):
    """Roots of A k^2 + i B k - (V - A''/4 - z) = 0 (frozen coefficients)."""
    A, B = c["A"], c["B"]
    rhs = c["V"] - 0.25 * c["App"] - z
    disc = cmath.sqrt(-B * B + 4 * A * rhs)
    return (-1j * B + disc) / (2 * A), (-1j * B - disc) / (2 * A)


def mode_deficiency(model: SpacetimeModel, m: int, z: complex, L: float = 100.0,
                    method: str = "riccati", rtol: float = 1e-10, atol: float = 1e-12,
                    stiff_tol: float = 1e-8, W_tol: float = 1e-8,
                    riccati_solver: str = "BDF") -> ModeConnection:
    """Connection determinant between the L^2 solutions at t = -inf and t = +inf.

    Mode m solves -(A u')' - A''u/4 - i(B u' + B'u/2) + V u = z u with
    A = 1 + c20, B = c10 + m c11, V = (c02 - 1) m^2 + c01 m + c00.
    State y = (u, A u').  With W normalized by the state norms,

        |W| = |rho_+ - rho_-| / (sqrt(1 + |rho_-|^2) sqrt(1 + |rho_+|^2)),

    where rho = A u'/u.  ``method="riccati"`` integrates rho directly (smooth,
    non-oscillatory along the growing direction); ``method="linear"`` shoots the
    2x2 system with RK45 and serves as a cross-check.  Perturbations of rho
    rotate at frequency ~2|m| while decaying at rate ~1/|m|, so the Riccati
    solve defaults to an implicit (BDF) integrator.
    """
    z = complex(z)
    coef = _mode_coeffs(model, m)
    k_lim = cmath.sqrt(-(m * m + z))
    k_minus = k_lim if k_lim.real > 0 else -k_lim   # decays toward t -> -inf
    exps = {"-inf": k_minus, "+inf": -k_minus}
    if abs(k_minus.real) <= stiff_tol * max(1.0, abs(k_minus)):
        return ModeConnection(m, z, exps, float("nan"), "Undetermined", L,
                              note="characteristic exponents on the imaginary axis")

    def potential(c):
        return c["V"] - 0.25 * c["App"] - z - 0.5j * c["Bp"]

    def rhs_linear(t, y):
        c = coef(t)
        up = y[1] / c["A"]
        return np.array([up, potential(c) * y[0] - 1j * c["B"] * up])

    def rhs_riccati(t, y):
        c = coef(t)
        r = y[0]
        return np.array([potential(c) - 1j * c["B"] * r / c["A"] - r * r / c["A"]])

    def shoot(t_start, sign):
        c = coef(t_start)
        r1, r2 = _local_roots(c, z)
        # decaying outward: Re k > 0 at -L, Re k < 0 at +L
        k = r1 if (r1.real > 0) == (sign < 0) else r2
        if method == "riccati":
            sol = solve_ivp(rhs_riccati, (t_start, 0.0), np.array([c["A"] * k]), method=riccati_solver,
                            rtol=rtol, atol=atol)
            y = np.array([1.0, sol.y[0, -1]])
        elif method == "linear":
            sol = solve_ivp(rhs_linear, (t_start, 0.0), np.array([1.0 + 0j, c["A"] * k]),
                            method="RK45", rtol=min(rtol, 1e-11), atol=min(atol, 1e-14))
            y = sol.y[:, -1]
        else:
            raise ValueError(f"unknown method {method!r}")
        if not sol.success:
            raise RuntimeError(f"mode {m}: integration failed ({sol.message})")
        return y, sol.nfev

    ym, n1 = shoot(-L, -1)
    yp, n2 = shoot(L, +1)
    W = abs(ym[0] * yp[1] - ym[1] * yp[0]) / (np.linalg.norm(ym) * np.linalg.norm(yp))
    verdict = "PASS" if W > W_tol else "FAIL"
    return ModeConnection(m, z, exps, float(W), verdict, L, n1 + n2)


@dataclass
class ModeScan:
    results: list
    stability: dict          # (m, z) -> relative change of W under L doubling
    mirror: dict             # m -> | W(+i) - W(-i) |
    verdict: str

    def to_dict(self):
        return {"mode_scan": [r.to_dict() for r in self.results],
                "L_doubling_rel_change": {f"{m}:{z}": v for (m, z), v in sorted(self.stability.items())},
                "mirror_abs_diff": {str(m): v for m, v in sorted(self.mirror.items())},
                "verdict": self.verdict}


def mode_scan(model: SpacetimeModel, m_max: int = 32, L: float = 100.0, zs=(1j, -1j),
              W_tol: float = 1e-8, stab_tol: float = 1e-6) -> ModeScan:
    jobs = [(m, z, LL) for m in range(-m_max, m_max + 1) for z in zs for LL in (L, 2 * L)]
    res = parallel_map(lambda j: mode_deficiency(model, j[0], j[1], j[2], W_tol=W_tol), jobs)
    by = {(r.m, r.z, r.L): r for r in res}
    base = [by[(m, z, L)] for m in range(-m_max, m_max + 1) for z in zs]
    stab, mirror = {}, {}
    for r in base:
        r2 = by[(r.m, r.z, 2 * L)]
        stab[(r.m, f"{r.z.imag:+g}i")] = abs(r2.W - r.W) / r.W if r.W > 0 else float("inf")
    if 1j in zs and -1j in zs:
        for m in range(-m_max, m_max + 1):
            mirror[m] = abs(by[(m, 1j, L)].W - by[(m, -1j, L)].W)
    if any(r.verdict == "Undetermined" for r in base):
        v = "Undetermined"
    elif all(r.verdict == "PASS" for r in base) and all(s <= stab_tol for s in stab.values()):
        v = "PASS"
    else:
        v = "FAIL"
    return ModeScan(base, stab, mirror, v)


# -- semiclassical ladder -----------------------------------------------------

@dataclass
class LadderFit:
    hs: list
    norms: list
    s_prime: float
    r2: float | None
    n_used: int
    symbol: str = ""
    center: list = field(default_factory=list)

    def to_dict(self):
        return {"hs": self.hs, "norms": self.norms, "s_prime": self.s_prime, "r2": self.r2,
                "n_used": self.n_used, "symbol": self.symbol, "center": self.center}


NOISE_FLOOR = 1e-13


def fit_loglog(hs, norms):
    """OLS of log norm on log h; returns (slope, R^2, points used)."""
    hs, norms = np.asarray(hs, float), np.asarray(norms, float)
    keep = norms >= NOISE_FLOOR
    if keep.sum() < 2:
        return math.inf, None, int(keep.sum())
    x, y = np.log(hs[keep]), np.log(norms[keep])
    slope, icept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + icept)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2, int(keep.sum())


def ladder_fit(model: SpacetimeModel, sym: SeparableSymbol, packet_center, hs, grid: GridSpec,
               resolution_tol: float = 1e-8) -> LadderFit:
    hs = [float(h) for h in hs]
    if len(hs) < 4 or any(not (0 < h <= 0.25) for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("need >= 4 strictly decreasing h values in (0, 1/4]")
    center = packet_center.astuple() if isinstance(packet_center, PhasePoint) else tuple(packet_center)
    eig = None if model.metric.is_flat() else q0_eigen(model.metric, grid.N_x)

    def one(h):
        psi = wave_packet(grid, center, (math.sqrt(h), math.sqrt(h)), h)
        alias = nyquist_mass(psi)
        if alias > resolution_tol:
            raise PacketClipped(f"packet at h={h} under-resolved: {alias:.2e} of its mass near Nyquist")
        return norm(grid, op_h_multiplier(sym, grid, h, psi, eig=eig))

    norms = parallel_map(one, hs)
    s, r2, n = fit_loglog(hs, norms)
    return LadderFit(hs, [float(v) for v in norms], s, r2, n, sym.label, list(map(float, center)))
