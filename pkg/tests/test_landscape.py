import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.errors import AdmissibilityError
from meanfield.landscape import (Configuration, SingularData, classify, coeff_A, coeff_A_identity,
                                 coeff_Btilde, grad_phi_m, hess_phi_m, phi_m, rho_at_centers)
from meanfield.surface import FlatTorus

T = FlatTorus.rectangle(1, 1.5)
TWO = SingularData(T, [[0, 0], [0.5, 0.75]], [3, 1])
unit = st.floats(0.1, 0.9)


def _config(data, pts):
    c = Configuration(data.surface, pts)
    if c.m > 1 and c.min_separation() < 0.1:
        return None
    if any(np.any(data.surface.distance(c.points, p) < 0.1) for p in data.sources):
        return None
    return c


@settings(max_examples=15, deadline=None)
@given(unit, unit, unit, unit)
def test_phi_symmetric_under_relabelling(a, b, c, d):
    cfg = _config(TWO, T.from_fractional(np.array([[a, b], [c, d]])))
    if cfg is None:
        return
    assert phi_m(TWO, cfg) == pytest.approx(phi_m(TWO, cfg.permuted([1, 0])), abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(unit, unit)
def test_gradient_matches_differences(a, b):
    data = SingularData(T, [[0, 0]], [2])
    cfg = _config(data, T.from_fractional(np.array([[a, b]])))
    if cfg is None:
        return
    h = 1e-5
    fd = [(phi_m(data, cfg.moved(h * e)) - phi_m(data, cfg.moved(-h * e))) / (2 * h) for e in np.eye(2)]
    assert np.allclose(grad_phi_m(data, cfg), fd, atol=1e-7)


@settings(max_examples=10, deadline=None)
@given(unit, unit, unit, unit)
def test_A_identity_two_points(a, b, c, d):
    cfg = _config(TWO, T.from_fractional(np.array([[a, b], [c, d]])))
    if cfg is None:
        return
    A = coeff_A(TWO, cfg)
    assert abs(A - coeff_A_identity(TWO, cfg)) <= 1e-8 * (1 + abs(A))


def test_hessian_symmetric_and_classified(rect, xi3, xi1):
    H = hess_phi_m(rect, xi3)
    assert np.allclose(H, H.T)
    assert classify(H)[0] == "max"
    assert classify(hess_phi_m(rect, xi1))[0] == "saddle"


def test_point_on_source_rejected(rect):
    with pytest.raises(AdmissibilityError):
        phi_m(rect, Configuration(rect.surface, [(0.0, 0.0)]))


def test_btilde_from_rho(rect, xi3):
    rho = rho_at_centers(rect, xi3)
    assert coeff_Btilde(rect, xi3) == pytest.approx(32 * np.pi / 3 / rho[0])
    assert np.all(rho > 0)


def test_bad_multiplicities():
    with pytest.raises(AdmissibilityError):
        SingularData(T, [[0, 0]], [-1])
    with pytest.raises(AdmissibilityError):
        SingularData(T, [[0, 0], [1, 0]], [1, 1])
