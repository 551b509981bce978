import cmath
import math

import numpy as np
import pytest

from kglab.quantize import GridSpec, SeparableSymbol, assemble, symbol_a
from kglab.spectral import (NOISE_FLOOR, fit_loglog, ladder_fit, mode_deficiency, mode_scan, sigma_min,
                            symmetry_identity)


def test_sigma_min_examples():
    assert sigma_min(np.zeros((1, 1)), 1j).sigma == pytest.approx(1.0)
    assert sigma_min(np.diag([3.0, -4.0]), 1j).sigma == pytest.approx(math.sqrt(10))


def test_sigma_min_sparse_path_agrees_with_dense(decaying):
    g = GridSpec(20.0, 64, 32)          # 2048 unknowns: shift-invert path
    A = assemble(decaying, g, 0.5)
    s = sigma_min(A, 1j)
    assert s.method == "shift-invert" and s.converged
    lam = np.linalg.eigvalsh(A.matrix.toarray())
    assert s.sigma == pytest.approx(math.sqrt(np.min(lam ** 2) + 1), rel=1e-9)


def test_assembled_sigma_at_least_one(flat, decaying):
    g = GridSpec(20.0, 32, 16)
    for m in (flat, decaying):
        assert sigma_min(assemble(m, g), 1j).sigma >= 1 - 1e-10


def test_symmetry_identity_and_negative_control(flat):
    g = GridSpec(20.0, 32, 16)
    A = assemble(flat, g)
    rng = np.random.default_rng(0)
    phi = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
    assert symmetry_identity(A, phi, 1j) <= 1e-10 * np.vdot(phi, phi).real * g.cell
    assert symmetry_identity(A, phi, 0.7) <= 1e-10
    M = A.matrix.toarray().astype(complex)
    M[3, 5] += 1e-3
    e = np.zeros(g.size, complex)
    e[3], e[5] = 1.0, 1j
    assert symmetry_identity(M, e, 1j) > 1e-6


@pytest.mark.parametrize("m", [0, 1, 3])
def test_flat_mode_connection_closed_form(flat, m):
    k = cmath.sqrt(-(m * m + 1j))
    expected = 2 * abs(k) / (1 + abs(k) ** 2)
    r = mode_deficiency(flat, m, 1j, L=30.0)
    assert r.verdict == "PASS" and r.W == pytest.approx(expected, rel=1e-8)


def test_riccati_matches_linear_shooting(decaying):
    for m in (0, 2, -5):
        a = mode_deficiency(decaying, m, 1j, L=40.0)
        b = mode_deficiency(decaying, m, 1j, L=40.0, method="linear")
        assert a.W == pytest.approx(b.W, rel=1e-7)


def test_real_z_is_undetermined(flat):
    r = mode_deficiency(flat, 0, 0.0)
    assert r.verdict == "Undetermined"


def test_mode_scan_small(flat):
    rep = mode_scan(flat, m_max=3, L=30.0)
    assert rep.verdict == "PASS"
    assert max(rep.mirror.values()) <= 1e-10


def test_fit_loglog_recovers_power():
    hs = 2.0 ** -np.arange(3, 8)
    s, r2, n = fit_loglog(hs, 3 * hs ** 4.5)
    assert s == pytest.approx(4.5) and r2 == pytest.approx(1.0) and n == 5
    assert fit_loglog(hs, np.zeros(5))[0] == math.inf
    assert NOISE_FLOOR > 0


def test_ladder_fit_zero_symbol_and_validation(flat):
    g = GridSpec(8.0, 1024, 512)
    hs = [2.0 ** -k for k in range(3, 7)]
    f = ladder_fit(flat, SeparableSymbol.zero(), (-6.0, 0.0, 1.0, 1.0), hs, g)
    assert f.s_prime == math.inf and all(v == 0 for v in f.norms)
    with pytest.raises(ValueError):
        ladder_fit(flat, SeparableSymbol.zero(), (-6.0, 0.0, 1.0, 1.0), hs[:3], g)


def test_on_support_packet_has_flat_ladder(flat):
    g = GridSpec(8.0, 1024, 512)
    hs = [2.0 ** -k for k in range(3, 8)]
    f = ladder_fit(flat, symbol_a(0.1, 2.0), (-6.0, 0.0, 1.0, 1.0), hs, g)
    assert abs(f.s_prime) <= 0.5
