import math

import pytest

from kglab.ellipticity import (EllipticityConstants, PreconditionError, a_microlocal, appendix_scan,
                               char_distance, eta, find_T0, region_classify)
from kglab.model import PhasePoint, SpacetimeModel


def test_constants():
    c = EllipticityConstants(0.1)
    assert c.gamma_ell == 0.025
    assert c.alpha == pytest.approx(0.024390243902439025, abs=1e-17)
    assert c.identity_residual() <= 1e-14 and c.identity_exact()


def test_a_examples(flat):
    c = EllipticityConstants(0.1, 20.0)
    assert a_microlocal(c, flat, (60.0, 0.3, 1.0, 1.0)) == 1.0
    assert a_microlocal(c, flat, (10.0, 0.3, 1.0, 1.0)) == 0.0
    assert a_microlocal(c, flat, (60.0, 0.3, math.sqrt(1.3), 1.0)) == 0.0


def test_eta_examples(flat):
    c = EllipticityConstants(0.1)
    assert eta(c, flat, (0.0, 0.0, 1.0, 1.0)) == 1.0
    tau = math.sqrt(1.0 + 3 * c.gamma_ell)
    assert eta(c, flat, (0.0, 0.0, tau, 1.0)) == 0.0


def test_appendix_scan_flat(flat):
    rep = appendix_scan(flat, 0.1, 20.0)
    assert rep.passed and rep.min_gap >= 0.1 * (1 - 1e-6)
    assert rep.extra["chain_violations"] == 0 and rep.extra["est3_violations"] == 0


def test_T0_and_preconditions(decaying):
    T0 = find_T0(decaying, 0.1)
    assert 1.0 < T0 < 20.0
    with pytest.raises(PreconditionError):
        appendix_scan(decaying, 0.1, 0.5 * T0)
    assert find_T0(SpacetimeModel.from_strings(c02="0.9"), 0.1) is None


def test_region_examples():
    T = 10.0
    assert region_classify(PhasePoint(-3 * T, 0, 2, 1), T).label == "Incoming"
    assert region_classify(PhasePoint(-3 * T, 0, 2, 1), T).incoming == 1.0
    assert region_classify(PhasePoint(3 * T, 0, 2, 1), T).label == "Outgoing"
    assert region_classify(PhasePoint(0, 0, 2, 1), T).label == "Neither"


def test_char_distance(flat):
    assert char_distance(flat, (0, 0, 1, 1)) == 0.0
    assert char_distance(flat, (0, 0, 2, 1)) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        char_distance(flat, (0, 0, 0, 0))
