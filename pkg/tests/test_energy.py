import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.ansatz import make_params
from meanfield.energy import (J_lambda, admissible_interval, energy_of_ansatz, expansion_ddelta,
                              expansion_ddelta2, expansion_value, lambda_rule, solve_critical_pair)
from meanfield.errors import BracketError, ZeroMeanError
from meanfield.landscape import EIGHT_PI
from meanfield.surface import Field, QuadratureGrid


@pytest.fixture(scope="module")
def grid(rect):
    return QuadratureGrid(rect.surface, (48, 72))


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(1, 30))
def test_J_ignores_constants_only_through_the_mean(c, lam):
    # J is defined on zero-mean fields; a nonzero mean is refused
    from meanfield.config import preset
    data = preset("rect-torus-n2").data()
    g = QuadratureGrid(data.surface, (32, 48))
    u = np.sin(2 * np.pi * g.points[..., 0]) * np.cos(4 * np.pi * g.points[..., 1] / 1.5)
    J = J_lambda(lam, Field(g, u), data)
    assert np.isfinite(J)
    if abs(c) > 1e-6:
        with pytest.raises(ZeroMeanError):
            J_lambda(lam, Field(g, u + c), data)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.005, 0.1), st.floats(-3, 3), st.floats(-5, 5), st.floats(-0.5, 0.5))
def test_expansion_derivatives_consistent(d, A, B, gap):
    lam = EIGHT_PI + gap
    h = 1e-4 * d
    fd = (expansion_value(lam, 1, 0.1, A, B, d + h) - expansion_value(lam, 1, 0.1, A, B, d - h)) / (2 * h)
    assert expansion_ddelta(lam, 1, A, B, d) == pytest.approx(fd, rel=1e-6, abs=1e-12 * 100 / h)
    fd2 = (expansion_ddelta(lam, 1, A, B, d + h) - expansion_ddelta(lam, 1, A, B, d - h)) / (2 * h)
    assert expansion_ddelta2(lam, 1, A, B, d) == pytest.approx(fd2, rel=1e-6, abs=1e-8 / h)


def test_analytic_delta_derivative(rect, xi3):
    # energy_of_ansatz cross-checks the analytic derivative against differences
    e = energy_of_ansatz(make_params(rect, xi3, 0.05), EIGHT_PI, derivative=True)
    assert np.isfinite(e.J) and np.isfinite(e.dJ)


def test_lambda_rules():
    assert lambda_rule(3.0, 1)(0.1) == 3.0
    up = lambda_rule("window+", 1)(0.1)
    down = lambda_rule("window-", 1)(0.1)
    assert up - EIGHT_PI == pytest.approx(EIGHT_PI - down)
    assert up > EIGHT_PI


def test_admissible_interval_contains_leading_root():
    lo, hi = admissible_interval(EIGHT_PI - 0.01, 1, 0.0, -2.24)
    assert lo < 1 / np.sqrt(2.24) < hi
    with pytest.raises(BracketError):
        admissible_interval(EIGHT_PI, 1, 0.0, 1.0)


def test_wrong_side_raises(rect, xi3):
    with pytest.raises(BracketError):
        solve_critical_pair(EIGHT_PI + 0.02, rect, xi3, B=-2.2416)
