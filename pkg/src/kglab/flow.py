"""Hamilton flow exp(sH_p), null covectors and the nontrapping classifier."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import symdsl
from .model import TWO_PI, PhasePoint, SpacetimeModel, eval_p
from .parallel import parallel_map


class Verdict(str, enum.Enum):
    ESCAPES_UP = "EscapesUp"
    ESCAPES_DOWN = "EscapesDown"
    TRAPPED = "Trapped"
    UNDETERMINED = "Undetermined"


ESCAPING = (Verdict.ESCAPES_UP, Verdict.ESCAPES_DOWN)
ALLOWED_PATTERNS = {
    (Verdict.ESCAPES_UP, Verdict.ESCAPES_DOWN),
    (Verdict.ESCAPES_DOWN, Verdict.ESCAPES_UP),
}


class NoNullCovector(ValueError):
    pass


def hamilton_field(m: SpacetimeModel, y) -> np.ndarray:
    """(t', x', tau', xi') = (p_tau, p_xi, -p_t, -p_x)."""
    j = m.p.jet(*y)
    return np.array([j.dtau, j.dxi, -j.dt, -j.dx], dtype=float)


def fiber_quadratic_in_tau(m: SpacetimeModel, t: float, x: float, xi: float):
    """Coefficients (A, B, C) with p(t, x, tau, xi) = A tau^2 + B tau + C."""
    A = B = C = 0.0
    for (j, k), e in m.p.coeffs.items():
        c = symdsl.evaluate(e, t, x) * xi ** k
        if j == 2:
            A += c
        elif j == 1:
            B += c
        else:
            C += c
    return A, B, C


def null_lift(m: SpacetimeModel, t: float, x: float, xi: float, branch: str = "+") -> PhasePoint:
    """Solve p(t, x, tau, xi) = 0 for tau; '+' takes the larger root."""
    if branch not in ("+", "-"):
        raise ValueError("branch must be '+' or '-'")
    A, B, C = fiber_quadratic_in_tau(m, t, x, xi)
    if A == 0.0:
        if B == 0.0:
            raise NoNullCovector(f"no tau solves p=0 at t={t}, x={x}, xi={xi}")
        roots = [-C / B]
    else:
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            if disc < -1e-14 * (B * B + abs(4.0 * A * C)):
                raise NoNullCovector(f"no real root (discriminant {disc:.3e}) at t={t}, x={x}, xi={xi}")
            disc = 0.0
        sq = math.sqrt(disc)
        qq = -0.5 * (B + math.copysign(sq, B if B != 0.0 else 1.0))
        roots = [qq / A, C / qq if qq != 0.0 else qq / A]
    tau = max(roots) if branch == "+" else min(roots)
    # one Newton step to push |p| to rounding level
    dp = 2.0 * A * tau + B
    if dp != 0.0:
        tau -= (A * tau * tau + B * tau + C) / dp
    if tau == 0.0 and xi == 0.0:
        raise NoNullCovector("zero covector")
    return PhasePoint(t, x, tau, xi)


@dataclass
class FlowTrace:
    s: np.ndarray
    states: np.ndarray        # columns t, x (unwrapped), tau, xi
    p: np.ndarray
    nfev: int
    steps: int
    status: int
    message: str = ""

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.p - self.p[0])))

    def point(self, i: int) -> PhasePoint:
        return PhasePoint(*self.states[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["s", "t", "x", "tau", "xi", "p"])
            for si, (t, x, tau, xi), pv in zip(self.s, self.states, self.p):
                w.writerow([f"{v:.17g}" for v in (si, t, x % TWO_PI, tau, xi, pv)])


def integrate(m: SpacetimeModel, pt: PhasePoint, s_span=(0.0, 1.0), tol: float = 1e-10,
              events=None, max_step: float = np.inf) -> FlowTrace:
    """Adaptive Dormand-Prince 5(4) solution of the Hamilton equations.

    Samples are returned with ``s`` strictly increasing regardless of the
    integration direction.  A failed integration (step-size underflow)
    returns the partial trace with ``status == -1``.
    """
    if not 1e-12 <= tol <= 1e-6:
        raise ValueError("tol must lie in [1e-12, 1e-6]")
    y0 = np.array(pt.astuple(), dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValueError("non-finite initial point")
    sol = solve_ivp(lambda s, y: hamilton_field(m, y), s_span, y0, method="RK45",
                    rtol=tol, atol=tol * 1e-2, events=events, max_step=max_step)
    s, Y = sol.t, sol.y.T
    if s[-1] < s[0]:
        s, Y = s[::-1], Y[::-1]
    pv = np.asarray(m.p.jet(Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3]).value, dtype=float)
    return FlowTrace(s, Y, pv, sol.nfev, len(sol.t) - 1, sol.status, sol.message)


@dataclass
class TrapVerdict:
    forward: Verdict
    backward: Verdict
    escape_times: tuple       # (forward, backward) arc at escape, None if none
    max_abs_t: float

    @property
    def allowed(self) -> bool:
        return (self.forward, self.backward) in ALLOWED_PATTERNS


def _direction_verdict(m, pt, direction, S_max, T_escape, tol):
    def leave(s, y):
        return abs(y[0]) - T_escape
    leave.terminal = True
    trace = integrate(m, pt, (0.0, direction * S_max), tol, events=leave,
                      max_step=max(S_max / 50.0, 1.0))
    t = trace.states[:, 0]
    max_t = float(np.max(np.abs(t)))
    if trace.status == 1 and abs(t[-1] if direction > 0 else t[0]) >= T_escape * (1 - 1e-12):
        arc = float(trace.s[-1] - trace.s[0])
        s_rel = trace.s - trace.s[0] if direction > 0 else trace.s[-1] - trace.s
        window = s_rel >= 0.9 * arc
        tdot = np.array([hamilton_field(m, y)[0] for y in trace.states[window]])
        end_t = t[-1] if direction > 0 else t[0]
        # t increases along the direction of travel iff direction * tdot > 0
        signs = np.sign(direction * tdot)
        if tdot.size and np.all(signs == np.sign(end_t)):
            v = Verdict.ESCAPES_UP if end_t > 0 else Verdict.ESCAPES_DOWN
            return v, arc, max_t
        return Verdict.UNDETERMINED, None, max_t
    return Verdict.UNDETERMINED, None, max_t


def classify(m: SpacetimeModel, pt: PhasePoint, S_max: float = 1e3, T_escape: float = 100.0,
             tol: float = 1e-9, null_tol: float = 1e-8) -> TrapVerdict:
    """Forward/backward escape verdict of the null geodesic through ``pt``.

    A point where the Hamilton field vanishes is certified Trapped.  Without
    escape and without that certificate the verdict is Undetermined.
    """
    if abs(eval_p(m, pt)) > null_tol:
        raise ValueError(f"point is not null: p = {eval_p(m, pt):.3e}")
    if pt.tau == 0.0 and pt.xi == 0.0:
        raise ValueError("zero covector")
    field_norm = float(np.linalg.norm(hamilton_field(m, pt.astuple())))
    if field_norm < 1e-12:
        return TrapVerdict(Verdict.TRAPPED, Verdict.TRAPPED, (None, None), abs(pt.t))
    fw, sf, mf = _direction_verdict(m, pt, +1, S_max, T_escape, tol)
    bw, sb, mb = _direction_verdict(m, pt, -1, S_max, T_escape, tol)
    return TrapVerdict(fw, bw, (sf, sb), max(mf, mb))


def stratified_null_points(m: SpacetimeModel, T: float, n: int, seed: int = 0,
                           n_strata: int = 25):
    """Null covectors over t in [-2T, 2T] (strata), random x, xi in +-[0.5, 2], both branches."""
    rng = np.random.default_rng(seed)
    strata = np.linspace(-2.0 * T, 2.0 * T, n_strata)
    pts, failures = [], []
    for i in range(n):
        t = float(strata[i % n_strata])
        branch = "+" if (i // n_strata) % 2 == 0 else "-"
        sign = 1.0 if (i // (2 * n_strata)) % 2 == 0 else -1.0
        x = float(rng.uniform(0.0, TWO_PI))
        xi = sign * float(rng.uniform(0.5, 2.0))
        try:
            pts.append(null_lift(m, t, x, xi, branch))
        except NoNullCovector as exc:
            failures.append({"t": t, "x": x, "xi": xi, "branch": branch, "error": str(exc)})
    return pts, failures


@dataclass
class NontrappingReport:
    verdict: str              # PASS / FAIL / Undetermined
    n_points: int
    n_allowed: int
    counts: dict
    offenders: list = field(default_factory=list)
    lift_failures: list = field(default_factory=list)

    def to_dict(self):
        return dict(vars(self))


def nontrapping_sweep(m: SpacetimeModel, T: float = 10.0, n: int = 1000, seed: int = 0,
                      S_max: float = 1e3, T_escape: float | None = None,
                      tol: float = 1e-9, extra_points=()) -> NontrappingReport:
    """Model-level check of the nontrapping assumption on a finite sample."""
    T_escape = T_escape if T_escape is not None else max(10.0 * T, 100.0)
    pts, failures = stratified_null_points(m, T, n, seed)
    pts = list(pts) + list(extra_points)
    verdicts = parallel_map(lambda p: classify(m, p, S_max, T_escape, tol), pts)
    counts: dict = {}
    offenders = []
    n_allowed = 0
    undetermined = False
    for p, v in zip(pts, verdicts):
        key = f"{v.forward.value}/{v.backward.value}"
        counts[key] = counts.get(key, 0) + 1
        if v.allowed:
            n_allowed += 1
            continue
        if Verdict.UNDETERMINED in (v.forward, v.backward) and Verdict.TRAPPED not in (v.forward, v.backward):
            undetermined = True
        offenders.append({"point": list(p.astuple()), "forward": v.forward.value,
                          "backward": v.backward.value,
                          "reproducer": f"flow.classify(model, PhasePoint{p.astuple()}, "
                                        f"S_max={S_max}, T_escape={T_escape})"})
    failed = any(o["forward"] == "Trapped" or o["backward"] == "Trapped" or
                 (o["forward"] in ("EscapesUp", "EscapesDown") and
                  o["backward"] in ("EscapesUp", "EscapesDown")) for o in offenders)
    if failed:
        verdict = "FAIL"
    elif undetermined:
        verdict = "Undetermined"
    else:
        verdict = "PASS"
    return NontrappingReport(verdict, len(pts), n_allowed, counts, offenders, failures)


@dataclass
class VelocityBoundReport:
    c1: float
    T_grid: list
    max_ratio: list           # per T
    T1_found: float | None
    sign_agreement: bool | None
    n_checked: int

    def to_dict(self):
        return dict(vars(self))


def velocity_bound_scan(m: SpacetimeModel, c1: float = 0.5, T_grid=(1, 2, 4, 8, 16, 32, 64),
                        samples: int = 400, seed: int = 0) -> VelocityBoundReport:
    """max |2 tau - p_tau| / |tau| over null covectors with |t| in [T, 10 T]."""
    if not 0.0 < c1 < 1.0:
        raise ValueError("c1 must lie in (0, 1)")
    T_grid = sorted(float(T) for T in T_grid)
    rng = np.random.default_rng(seed)
    per_T = []
    for T in T_grid:
        rows = []
        for i in range(samples):
            t = math.copysign(T * 10.0 ** rng.uniform(0.0, 1.0), (-1) ** i)
            x = rng.uniform(0.0, TWO_PI)
            xi = math.copysign(rng.uniform(0.5, 2.0), (-1) ** (i // 2))
            branch = "+" if (i // 4) % 2 == 0 else "-"
            try:
                pt = null_lift(m, t, x, xi, branch)
            except NoNullCovector:
                continue
            if pt.tau == 0.0:
                rows.append((T, math.inf, 0.0, 0.0))
                continue
            ptau = m.p.jet(*pt.astuple()).dtau
            rows.append((T, abs(2.0 * pt.tau - ptau) / abs(pt.tau), pt.tau, float(ptau)))
        per_T.append(rows)
    max_ratio = [float(max((r[1] for r in rows), default=math.inf)) for rows in per_T]
    T1 = None
    for i in range(len(T_grid)):
        if all(r <= c1 for r in max_ratio[i:]):
            T1 = T_grid[i]
            break
    agree, n_checked = None, 0
    if T1 is not None:
        checked = [r for rows in per_T for r in rows if r[0] >= T1]
        n_checked = len(checked)
        agree = all(np.sign(r[2]) == np.sign(r[3]) for r in checked)
    return VelocityBoundReport(c1, T_grid, max_ratio, T1, agree, n_checked)


def stationary_null_points(m: SpacetimeModel, t_range=(-10.0, 10.0), n_t: int = 81, n_x: int = 16,
                           limit: int = 4, tol: float = 1e-12) -> list:
    """Grid points (t, x, 0, +-1) that are null with a vanishing Hamilton field.

    Such points are fixed by the flow, hence trapped; a nondegenerate model has none.
    """
    out = []
    for t in np.linspace(*t_range, n_t):
        for x in np.linspace(0.0, TWO_PI, n_x, endpoint=False):
            for xi in (1.0, -1.0):
                y = np.array([t, x, 0.0, xi])
                if abs(m.p.value(*y)) <= tol and np.linalg.norm(hamilton_field(m, y)) <= tol:
                    out.append(PhasePoint(float(t), float(x), 0.0, xi))
                    if len(out) >= limit:
                        return out
    return out
