import numpy as np
import pytest

from kglab import symdsl
from kglab.escape import EscapeParams
from kglab.model import MetricS1, SpacetimeModel
from kglab.quantize import (GridSpec, PacketClipped, SeparableSymbol, assemble, commutator_per_slice,
                            fd4_first, fourier_wavenumbers, inner, load_grid_function, norm,
                            nyquist_mass, op_h_multiplier, q0_calculus, q0_eigen,
                            save_grid_function, spectral_first, symbol_a, wave_packet,
                            weyl_oracle_error, weyl_quadrature_1d, weyl_term)


def test_grid_validation():
    g = GridSpec(4.0, 16, 32)
    assert g.dt == 0.5 and g.size == 512
    assert g.t[0] == pytest.approx(-3.75)
    for bad in ((4.0, 12, 16), (4.0, 16, 8), (-1.0, 16, 16)):
        with pytest.raises(ValueError):
            GridSpec(*bad)
    with pytest.raises(ValueError):
        GridSpec(10.0, 16, 16).check_escape(EscapeParams(0.1, 0.5, T=5.0))


def test_fd4_exact_on_cubics():
    g = GridSpec(4.0, 32, 16)
    D = fd4_first(32, g.dt).toarray()
    t = g.t
    inner_rows = slice(2, -2)
    np.testing.assert_allclose((D @ t ** 3)[inner_rows], (3 * t ** 2)[inner_rows], atol=1e-12)
    np.testing.assert_allclose(D, -D.T)


def test_spectral_derivative():
    n = 16
    x = np.arange(n) * 2 * np.pi / n
    K = spectral_first(n)
    np.testing.assert_allclose(K @ np.sin(3 * x), 3 * np.cos(3 * x), atol=1e-12)
    assert fourier_wavenumbers(n)[n // 2] == 0.0


def test_assembly_hermitian(flat, decaying):
    g = GridSpec(8.0, 16, 16)
    assert assemble(flat, g).asymmetry() <= 1e-12
    assert assemble(decaying, g, 0.5).asymmetry() <= 1e-12
    cm = SpacetimeModel.from_strings(g="1 + 0.2*cos(x)", c10="jap(t)^(-3)", c11="0.1*jap(t)^(-3)*sin(x)")
    A = assemble(cm, g, 0.5)
    assert not A.is_real and A.asymmetry() <= 1e-12


def test_assembly_flat_spectrum_vs_separation(flat):
    g = GridSpec(8.0, 16, 16)
    A = assemble(flat, g).matrix.toarray()
    lam_t = np.linalg.eigvalsh(-(fd4_first(16, g.dt) @ fd4_first(16, g.dt)).toarray())
    lam_x = np.linalg.eigvalsh(spectral_first(16).T @ spectral_first(16))
    expected = np.sort((lam_t[:, None] - lam_x[None, :]).ravel())
    np.testing.assert_allclose(np.linalg.eigvalsh(A), expected, atol=1e-10)


def test_weyl_second_order_rule_converges():
    errs = [weyl_oracle_error("jap(t)^(-3)", 2, GridSpec(4.0, n, 16)) for n in (16, 32, 64)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


def test_weyl_mixed_rule_against_exact_action():
    # Op^w(a tau xi) on phi(t) e^{ikx}: k * Op^w(a tau) phi
    g = GridSpec(4.0, 256, 16)
    T, X = g.mesh()
    e = symdsl.parse("jap(t)^(-2)")
    phi = np.exp(-T ** 2) * np.exp(2j * X)
    lhs = weyl_term(e, 1, 1, g) @ phi.ravel()
    rhs = 2 * (weyl_term(e, 1, 0, g) @ phi.ravel())
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_quadrature_oracle_matches_closed_form():
    # constant a: Op^w(tau^2) phi = -phi''
    s = 0.7
    phi = lambda u: np.exp(-u * u / (2 * s * s))  # noqa: E731
    t = np.linspace(-1.5, 1.5, 7)
    o = weyl_quadrature_1d(lambda u: np.ones_like(u), 2, t, phi, (-8 * s, 8 * s),
                           n_s=801, tau_max=12 / s, n_tau=1601)
    exact = (1 / s ** 2 - t ** 2 / s ** 4) * phi(t)
    np.testing.assert_allclose(o, exact, atol=1e-7)


def test_q0_functional_calculus_commutes():
    g = GridSpec(8.0, 16, 16)
    ep = EscapeParams(0.1, 0.5, 1.0, 2.0)
    B = q0_calculus(g, 0.5, ep)
    eig = B.meta["eig"]
    assert np.max(commutator_per_slice(B, eig)) < 1e-12
    metric = MetricS1(symdsl.parse("1 + 0.3*cos(x)"))
    Bv = q0_calculus(g, 0.5, ep, metric=metric)
    assert np.max(commutator_per_slice(Bv, Bv.meta["eig"])) < 1e-12


def test_q0_mode_factors():
    g = GridSpec(8.0, 16, 16)
    ep = EscapeParams(0.1, 0.5, 1.0, 2.0)
    B = q0_calculus(g, 0.5, ep).matrix.toarray()[:16, :16]
    x = np.arange(16) * 2 * np.pi / 16
    for m, f in ((2, 1.0), (4, 0.0)):
        v = np.cos(m * x)
        np.testing.assert_allclose(B @ v, f * v, atol=1e-12)


def test_q0_eigenvalues_flat():
    mu = np.sort(q0_eigen(MetricS1(symdsl.ONE), 16).mu)
    np.testing.assert_allclose(mu[:5], [0, 0, 1, 1, 4], atol=1e-12)


def test_wave_packet_properties():
    g = GridSpec(8.0, 256, 64)
    psi = wave_packet(g, (-2.0, 1.0, 1.0, 1.0), (0.5, 0.5), 0.25)
    assert norm(g, psi) == pytest.approx(1.0)
    T, _ = g.mesh()
    assert inner(g, psi, T * psi).real == pytest.approx(-2.0, abs=1e-10)
    assert nyquist_mass(psi) < 1e-8
    with pytest.raises(PacketClipped):
        wave_packet(g, (7.5, 0.0, 1.0, 1.0), (0.5, 0.5), 0.25)


def test_multiplier_identity_and_zero():
    g = GridSpec(8.0, 64, 32)
    psi = wave_packet(g, (0.0, 0.0, 1.0, 1.0), (0.5, 0.5), 0.25)
    np.testing.assert_allclose(op_h_multiplier(SeparableSymbol.one(), g, 0.25, psi), psi, atol=1e-13)
    assert np.all(op_h_multiplier(SeparableSymbol.zero(), g, 0.25, psi) == 0)
    with pytest.raises(TypeError):
        op_h_multiplier(lambda *a: 1.0, g, 0.25, psi)


def test_far_off_support_packet_is_small():
    g = GridSpec(8.0, 1024, 512)
    h = 1 / 16
    psi = wave_packet(g, (-6.0, 0.0, 0.0, 1.0), (h ** 0.5, h ** 0.5), h)
    out = op_h_multiplier(symbol_a(0.1, 2.0), g, h, psi)
    assert norm(g, out) <= 1e-3


def test_grid_function_io(tmp_path):
    g = GridSpec(4.0, 16, 16)
    u = np.random.default_rng(0).standard_normal(g.shape) * (1 + 2j)
    save_grid_function(tmp_path / "u.bin", g, 0.5, u)
    g2, h, v = load_grid_function(tmp_path / "u.bin")
    assert g2 == g and h == 0.5 and np.array_equal(u, v)
