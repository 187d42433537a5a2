import numpy as np
import pytest

from meanfield.ansatz import (Ansatz, DiskExpansion, LinearizedOperator, ansatz_W, bubble_mass,
                              kernel_elements, bubble_expansion_error, make_params, residual_report)
from meanfield.errors import ZeroMeanError
from meanfield.landscape import EIGHT_PI, rho_at_centers
from meanfield.surface import Cutoff


@pytest.fixture(scope="module")
def params(rect, xi3):
    return make_params(rect, xi3, 0.04)


def test_width_scales_with_rho(params, rect, xi3):
    assert params.deltas[0] == pytest.approx(0.04 * np.sqrt(rho_at_centers(rect, xi3)[0]))


def test_bubble_mass_close_to_8pi(params):
    a = Ansatz(params)
    assert a.masses()[0] == pytest.approx(EIGHT_PI, rel=1e-2)


def test_ansatz_field_has_zero_mean(params):
    W = ansatz_W(params)
    assert abs(W.mean) < 1e-10 * np.max(np.abs(W.values))


def test_expansion_error_small(params):
    e = bubble_expansion_error(params)
    assert e.full < 1e-3
    assert e.far < 1e-2


def test_residual_has_zero_integral(params):
    r = residual_report(params, EIGHT_PI)
    assert abs(r.integral) < 1e-10


def test_disk_expansion_reproduces_harmonic_plus_quadratic():
    R = 0.3
    th = 2 * np.pi * np.arange(128) / 128
    exact = lambda x, y: x**3 - 3 * x * y * y + 0.5 * x + 2.0 * (x * x + y * y) / 4
    de = DiskExpansion(exact(R * np.cos(th), R * np.sin(th)), R, 2.0)
    y = np.array([[0.1, -0.05], [0.0, 0.2], [-0.2, 0.1]])
    assert np.allclose(de.at(y), exact(y[:, 0], y[:, 1]), atol=1e-13)


def test_kernel_gram_diagonal(params):
    k = kernel_elements(params)
    assert k.gram[1, 1] == pytest.approx(-32 * np.pi / 3, rel=1e-2)


def test_linearized_operator_rejects_nonzero_mean(params):
    op = LinearizedOperator(params, EIGHT_PI, ansatz=Ansatz(params))
    with pytest.raises(ZeroMeanError):
        op.apply_L(np.ones(op.grid.shape))
    v = np.cos(2 * np.pi * op.grid.points[..., 0])
    assert np.all(np.isfinite(op.apply_L(v)))


def test_cutoff_bubble_mass_tends_to_8pi():
    cut = Cutoff(0.2)
    masses = [bubble_mass(d, cut) for d in (0.02, 0.01, 0.005)]
    gaps = EIGHT_PI - np.array(masses)
    assert np.all(gaps > 0)
    # the deficit outside the plateau decays like d^2
    assert gaps[0] / gaps[1] == pytest.approx(4, rel=0.05)
