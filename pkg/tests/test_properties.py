import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from kglab import symdsl
from kglab.cutoffs import chi1, chi2, dchi1, dchi2
from kglab.ellipticity import EllipticityConstants, char_distance, region_classify
from kglab.escape import Direction, EscapeParams, b0, lambda_weight
from kglab.flow import integrate, null_lift
from kglab.model import FiberPolynomial, PhasePoint, SpacetimeModel, poisson
from kglab.quantize import GridSpec, SeparableSymbol, SeparableTerm, assemble, inner, op_h_multiplier
from kglab.spectral import fit_loglog

FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW = settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])

finite = st.floats(-5, 5, allow_nan=False)
coef = st.floats(-2, 2, allow_nan=False).map(lambda v: round(v, 3))

# smooth expression trees without division
leaf = st.one_of(st.sampled_from([symdsl.Var("t"), symdsl.Var("x")]), coef.map(symdsl.Const))


def _extend(children):
    return st.one_of(
        st.builds(symdsl.Add, children, children),
        st.builds(symdsl.Sub, children, children),
        st.builds(symdsl.Mul, children, children),
        st.builds(symdsl.Pow, children, st.integers(0, 3)),
        st.builds(lambda a, f: symdsl.Call(f, a), children, st.sampled_from(["sin", "cos", "jap", "chi2"])),
    )


exprs = st.recursive(leaf, _extend, max_leaves=6)


@FAST
@given(st.text(alphabet="tx0123456789.+-*/^() sincoxpjahi", max_size=20))
def test_parser_is_total(text):
    try:
        e = symdsl.parse(text)
    except symdsl.ParseError as exc:
        assert 0 <= exc.offset <= len(text)
    else:
        assert isinstance(e, symdsl.Expr)


@FAST
@given(exprs, st.floats(-2, 2), st.floats(0, 6.3))
def test_print_parse_round_trip(e, t, x):
    back = symdsl.parse(symdsl.to_text(e))
    assert symdsl.to_text(back) == symdsl.to_text(e)
    try:
        v = symdsl.evaluate(e, t, x)
    except symdsl.EvalError:
        return
    assert symdsl.evaluate(back, t, x) == v


@FAST
@given(exprs, st.floats(-2, 2), st.floats(0, 6.3), st.sampled_from(["t", "x"]))
def test_diff_matches_finite_difference(e, t, x, var):
    try:
        exact = symdsl.evaluate(symdsl.diff(e, var), t, x)
        fd = symdsl.fd_derivative(e, var, t, x, step=1e-5)
    except symdsl.EvalError:
        return
    assume(abs(exact) < 1e6)
    assert abs(exact - fd) <= 1e-4 * (1 + abs(exact))


def _poly(cs):
    keys = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    srcs = ["{}*jap(t)^(-1)", "{}*sin(x)", "{}*cos(t)", "{}", "{}*t", "{}*x"]
    return FiberPolynomial({k: symdsl.parse(s.format(c)) for k, s, c in zip(keys, srcs, cs)})


polys = st.lists(coef, min_size=6, max_size=6).map(_poly)
points = st.tuples(finite, st.floats(0, 6.3), finite, finite)


@FAST
@given(polys, polys, polys, points)
def test_poisson_antisymmetry_and_leibniz(a, b, c, pt):
    assert poisson(a, b, pt) == -poisson(b, a, pt) or math.isclose(
        poisson(a, b, pt), -poisson(b, a, pt), rel_tol=1e-12, abs_tol=1e-12)
    lhs = poisson(a, b * c, pt)
    rhs = poisson(a, b, pt) * c(*pt) + b(*pt) * poisson(a, c, pt)
    assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9)


@FAST
@given(st.floats(-4, 4))
def test_cutoff_invariants(s):
    assert 0.0 <= chi1(s) <= 1.0 and 0.0 <= chi2(s) <= 1.0
    assert dchi1(s, 1) <= 0.0
    assert s * dchi2(s, 1) <= 0.0
    assert chi2(s) == chi2(-s)
    if s <= -1:
        assert chi1(s) == 1.0
    if s >= 0:
        assert chi1(s) == 0.0
    if abs(s) <= 1:
        assert chi2(s) == 1.0
    if abs(s) >= 2:
        assert chi2(s) == 0.0


@FAST
@given(st.floats(1e-6, 1.0, exclude_max=True))
def test_ellipticity_identity(delta):
    assert EllipticityConstants(delta).identity_residual() <= 1e-14


@FAST
@given(points, st.floats(0.01, 100))
def test_char_distance_homogeneous(pt, s):
    t, x, tau, xi = pt
    assume(tau * tau + xi * xi > 1e-6)
    m = SpacetimeModel.flat()
    a = char_distance(m, (t, x, tau, xi))
    b = char_distance(m, (t, x, s * tau, s * xi))
    assert math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-14)


@FAST
@given(st.floats(-200, 200), finite, st.floats(1.5, 50))
def test_region_weights(t, tau, T):
    w = region_classify((t, 0.0, tau, 1.0), T)
    assert 0.0 <= w.incoming <= 1.0 and 0.0 <= w.outgoing <= 1.0
    if abs(t) >= T:
        assert w.incoming * w.outgoing == 0.0


@FAST
@given(st.sampled_from(list(Direction)), st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_lambda_monotone(d, t1, t2):
    ep = EscapeParams(0.1, 0.5, 1.0, 5.0, d)
    lo, hi = sorted((t1, t2))
    l1, l2 = lambda_weight(ep, lo), lambda_weight(ep, hi)
    assert 0.1 <= min(l1, l2) and max(l1, l2) <= 0.2
    if d is Direction.INCOMING:
        assert l1 <= l2
    else:
        assert l1 >= l2


@FAST
@given(st.sampled_from(list(Direction)), st.floats(-200, 200), st.floats(-3, 3), st.floats(-3, 3))
def test_b0_support_sign_law(d, t, tau, xi):
    m = SpacetimeModel.flat()
    v = b0(EscapeParams(0.1, 0.5, 1.0, 10.0, d), m, PhasePoint(t, 0.0, tau, xi))
    assert v >= 0.0
    if v > 0:
        assert (t * tau < 0) if d is Direction.INCOMING else (t * tau > 0)


@SLOW
@given(st.lists(coef, min_size=4, max_size=4))
def test_assembly_is_hermitian(cs):
    m = SpacetimeModel.from_strings(
        g="1", mu=1.0, c00=f"{cs[0]}*jap(t)^(-2)*cos(x)", c10=f"{cs[1]}*jap(t)^(-2)",
        c11=f"{cs[2]}*jap(t)^(-3)*sin(x)", c02=f"{cs[3] / 4}*jap(t)^(-2)")
    A = assemble(m, GridSpec(8.0, 16, 16), 0.5)
    assert A.asymmetry() <= 1e-12


_grid = GridSpec(4.0, 32, 16)
vecs = st.integers(0, 2 ** 32 - 1).map(
    lambda s: (lambda r: r.standard_normal(_grid.shape) + 1j * r.standard_normal(_grid.shape))(
        np.random.default_rng(s)))
real_syms = st.tuples(st.floats(0.1, 2), st.floats(-1, 1), st.floats(0.2, 3)).map(
    lambda p: SeparableSymbol((SeparableTerm(lambda t, a=p[0]: np.exp(-a * t * t),
                                             lambda tau, b=p[1]: chi2(tau - b),
                                             lambda q, c=p[2]: chi2(q / c)),)))


@FAST
@given(real_syms, vecs, vecs, st.floats(-2, 2), st.floats(0.05, 0.25))
def test_op_h_linear_and_symmetric(sym, u, v, c, h):
    Au, Av = op_h_multiplier(sym, _grid, h, u), op_h_multiplier(sym, _grid, h, v)
    lin = op_h_multiplier(sym, _grid, h, u + c * v)
    assert np.allclose(lin, Au + c * Av, atol=1e-12)
    assert abs(inner(_grid, u, Av) - inner(_grid, Au, v)) <= 1e-10 * (1 + abs(inner(_grid, u, Av)))


@SLOW
@given(st.floats(-20, 20), st.floats(0, 6.3), st.floats(0.5, 2) | st.floats(-2, -0.5), st.sampled_from("+-"))
def test_flow_conserves_p(t, x, xi, branch):
    m = SpacetimeModel.from_strings(mu=2.0, c02="0.2*jap(t)^(-3)")
    pt = null_lift(m, t, x, xi, branch)
    tr = integrate(m, pt, (0.0, 10.0))
    assert tr.drift <= 1e-7


@FAST
@given(st.floats(0.5, 8), st.floats(0.01, 100))
def test_fit_recovers_power(s, c):
    hs = 2.0 ** -np.arange(3, 8)
    slope, r2, n = fit_loglog(hs, c * hs ** s)
    assert math.isclose(slope, s, rel_tol=1e-9) and r2 > 1 - 1e-9
