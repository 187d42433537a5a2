import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.errors import InsufficientDataError
from meanfield.fitting import extrapolate_limit, fit_order


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 5), st.floats(0.1, 10), st.sampled_from([0.0, 1.0]))
def test_fit_order_recovers_exponent(p, C, lp):
    h = np.geomspace(0.08, 0.01, 6)
    err = C * h**p * np.abs(np.log(h)) ** lp
    q, c = fit_order(h, err, log_power=lp)
    assert q == pytest.approx(p, abs=1e-9)
    assert c == pytest.approx(C, rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-5, 5), st.sampled_from([1.0, 2.0]))
def test_extrapolation_exact_for_power_law(L, c, rate):
    h = np.array([1e-3, 5e-4, 2.5e-4])
    assert extrapolate_limit(h, L + c * h**rate, rate) == pytest.approx(L, abs=1e-9)


def test_too_few_points():
    with pytest.raises(InsufficientDataError):
        fit_order([0.1, 0.05], [1.0, 0.5])
