import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield import _ewald_py
from meanfield.errors import SingularityError
from meanfield.greens import HAVE_COMPILED, TorusGreen, evaluator, theta_green
from meanfield.surface import FlatTorus, RoundSphere

TORI = [FlatTorus.rectangle(1, 1), FlatTorus.rectangle(1, 1.5), FlatTorus([[1.0, 0.0], [0.4, 0.8]])]
unit = st.floats(0, 1, exclude_max=True)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(TORI), unit, unit, unit, unit)
def test_lattice_sum_matches_theta_route(torus, a, b, c, d):
    x = torus.from_fractional(np.array([a, b]))
    xi = torus.from_fractional(np.array([c, d]))
    if torus.distance(x, xi) < 1e-3:
        return
    G = evaluator(torus)
    assert float(G.green(x, xi)) == pytest.approx(float(theta_green(torus, x, xi)), abs=1e-10)


def test_backends_agree(rng):
    T = TORI[2]
    fast = TorusGreen(T)
    slow = TorusGreen(T, backend=_ewald_py)
    y = T.wrap(T.random_points(rng, 40) - T.random_points(rng, 1))
    for order in (0, 1, 2):
        a = fast.smooth(y, order)
        b = slow.smooth(y, order)
        for u, v in zip(a, b):
            if u is not None:
                assert np.allclose(u, v, atol=1e-12)
    assert isinstance(HAVE_COMPILED, bool)


def test_gradient_and_hessian_match_differences(rng):
    T = TORI[1]
    G = evaluator(T)
    xi = np.array([0.2, 0.3])
    x = np.array([0.61, 1.1])
    h = 1e-5
    fd = [(G.green(x + h * e, xi) - G.green(x - h * e, xi)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(G.green_grad(x[None], xi)[0], fd, atol=1e-8)
    gx = [(G.green_grad((x + h * e)[None], xi) - G.green_grad((x - h * e)[None], xi))[0] / (2 * h)
          for e in np.eye(2)]
    H = G.green_hess(x[None], xi)[0]
    assert np.allclose([H[0], H[1], H[2]], [gx[0][0], gx[0][1], gx[1][1]], atol=1e-6)


def test_pole_raises():
    G = evaluator(TORI[0])
    with pytest.raises(SingularityError):
        G.green(np.array([0.3, 0.3]), np.array([0.3, 0.3]))
    S = evaluator(RoundSphere())
    with pytest.raises(SingularityError):
        S.green(np.array([0, 0, 1.0]), np.array([0, 0, 1.0]))


def test_regular_part_is_continuous_at_the_pole():
    T = TORI[0]
    G = evaluator(T)
    xi = np.array([0.5, 0.5])
    near = xi + np.array([1e-7, 0.0])
    assert float(G.regular_part(near[None], xi)[0]) == pytest.approx(G.robin(), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_sphere_green_symmetric(seed):
    S = RoundSphere()
    G = evaluator(S)
    x, y = S.random_points(np.random.default_rng(seed), 2)
    assert float(G.green(x, y)) == pytest.approx(float(G.green(y, x)), abs=1e-14)
