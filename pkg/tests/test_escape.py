import numpy as np
import pytest

from kglab.cutoffs import dchi1
from kglab.escape import (Direction, EscapeParams, NestingError, b0, bracket_gap, lambda_weight,
                          ladder, positivity_scan, t_search, tilde_f)
from kglab.model import PhasePoint

INC = EscapeParams(0.1, 0.5, 1.0, 20.0, Direction.INCOMING)
OUT = EscapeParams(0.1, 0.5, 1.0, 20.0, Direction.OUTGOING)


def test_lambda_examples():
    assert lambda_weight(INC, 4.0) == pytest.approx(0.15, abs=1e-15)
    assert lambda_weight(OUT, 4.0) == pytest.approx(0.15, abs=1e-15)
    for t in (1e6, -1e6):
        assert abs(lambda_weight(INC, t) - 0.2) <= 1e-3 * 0.1
    with pytest.raises(ValueError):
        lambda_weight(INC, 0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        EscapeParams(0.3, 0.5)
    with pytest.raises(ValueError):
        EscapeParams(0.1, 0.5, T=0.5)


def test_b0_examples(flat):
    assert b0(INC, flat, PhasePoint(-60, 0, 1, 1)) == pytest.approx(60.0)
    assert b0(INC, flat, PhasePoint(-10, 0, 1, 1)) == 0.0
    assert b0(INC, flat, PhasePoint(-60, 0, -1, 1)) == 0.0


def test_bracket_gap_examples(flat):
    assert bracket_gap(INC, flat, 1.0, PhasePoint(-60, 0, 1, 1)) == pytest.approx(1.0, abs=1e-12)
    assert bracket_gap(INC, flat, 1.0, PhasePoint(0, 0, 5, 1)) == 0.0


def test_interior_gap_anchor(flat):
    T = 5.0
    ep = EscapeParams(0.1, 0.5, 1.0, T)
    assert bracket_gap(ep, flat, 1.0, PhasePoint(-3 * T, 0, 1, 1)) == pytest.approx(1.0, abs=1e-8)


def test_tilde_f_examples(flat):
    T = OUT.T
    assert tilde_f(OUT, flat, PhasePoint(3 * T, 0, 1, 1)) == 0.0
    expected = 2.0 / T * abs(dchi1(-0.5, 1))
    assert tilde_f(OUT, flat, PhasePoint(1.5 * T, 0, 1, 1)) == pytest.approx(expected, rel=1e-12)
    assert tilde_f(OUT, flat, PhasePoint(1.5 * T, 0, -1, 1)) == 0.0
    with pytest.raises(ValueError):
        tilde_f(INC, flat, PhasePoint(30, 0, 1, 1))


def test_positivity_scans(flat, decaying):
    rep = positivity_scan(INC, flat, res=16)
    assert rep.passed and rep.extra["support_sign_violations"] == 0
    out = positivity_scan(OUT, flat, res=16)
    assert out.passed and out.extra["tilde_f_max_outside_band"] == 0.0
    ts = t_search(EscapeParams(0.1, 1.0, 1.0, 5.0), decaying, res=16)
    assert ts.passed and ts.extra["T_found"] is not None
    with pytest.raises(ValueError):
        positivity_scan(INC, flat, res=8)


def test_ladder(flat):
    ep = EscapeParams(0.1, 0.5, 1.0, 20.0)
    lv = ladder(ep, 1, flat, res=16)
    assert lv[1].delta == pytest.approx(0.15) and lv[1].T == pytest.approx(15.0)
    lv4 = ladder(EscapeParams(0.01, 0.5, 1.0, 40.0), 4, flat, res=16)
    assert all(a.delta < b.delta and a.T > b.T for a, b in zip(lv4, lv4[1:]))
    with pytest.raises(ValueError):
        ladder(EscapeParams(0.2, 0.5, 1.0, 20.0), 8, flat)
    assert issubclass(NestingError, ValueError)


def test_scan_is_deterministic(flat):
    a = positivity_scan(INC, flat, res=16).to_dict()
    b = positivity_scan(INC, flat, res=16).to_dict()
    assert a == b
