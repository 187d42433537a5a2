import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.chern_simons import (C_of, I_eps_parts, _grid_integrals, build_condensate, c_minus,
                                    exp_c_minus, identity_residual, small_eps_constant)
from meanfield.config import preset
from meanfield.energy import J_lambda
from meanfield.errors import ConfigError, InadmissibleError
from meanfield.landscape import Configuration, SingularData
from meanfield.surface import Field, FlatTorus, QuadratureGrid

DATA = preset("rect-torus-n2").data()
GRID = QuadratureGrid(DATA.surface, (32, 48))


def _field(a, b, kx, ky):
    x = GRID.points
    v = a * np.cos(2 * np.pi * kx * x[..., 0]) + b * np.sin(2 * np.pi * ky * x[..., 1] / 1.5)
    return Field(GRID, v - np.sum(GRID.weights * v) / np.sum(GRID.weights))


coeffs = st.floats(-1.5, 1.5)
modes = st.integers(1, 3)


@settings(max_examples=30, deadline=None)
@given(coeffs, coeffs, modes, modes, st.floats(1e-3, 0.1))
def test_constant_solves_the_quadratic_identity(a, b, kx, ky, eps):
    u = _field(a, b, kx, ky)
    I1, I2 = _grid_integrals(DATA, u)
    try:
        ec = exp_c_minus(DATA.N, eps, I1, I2)
    except InadmissibleError:
        assert eps**2 * C_of(u, DATA) > 1
        return
    assert identity_residual(DATA.N, eps, I1, I2, ec) <= 1e-10


def test_inadmissible_when_eps_is_large():
    u = _field(0.5, 0.2, 1, 1)
    eps = 1.1 / np.sqrt(C_of(u, DATA))
    with pytest.raises(InadmissibleError):
        c_minus(u, DATA, eps)


def test_small_eps_limits():
    u = _field(0.4, -0.3, 1, 2)
    I1, _ = _grid_integrals(DATA, u)
    N = DATA.N
    for eps in (1e-4, 1e-5, 1e-6):
        ec = np.exp(c_minus(u, DATA, eps))
        assert ec * I1 / (4 * np.pi * N * eps**2) == pytest.approx(1, abs=10 * eps**2 * C_of(u, DATA))
    eps = 1e-6
    J = J_lambda(4 * np.pi * N, u, DATA)
    rest = I_eps_parts(J, N, eps, C_of(u, DATA))
    # area = 0 keeps the 1/eps^2 term out of the comparison
    limit = small_eps_constant(N, eps, 0.0)
    assert abs(rest - limit - J) < 1e-8


def test_odd_multiplicity_refused():
    T = FlatTorus.rectangle(1, 1.5)
    data = SingularData(T, [[0, 0]], [1])
    with pytest.raises(ConfigError):
        build_condensate(1e-3, data, Configuration(T, [[0.5, 0.75]]))


def test_positive_B_refused(xi1):
    with pytest.raises(ConfigError, match="B ="):
        build_condensate(1e-3, DATA, xi1)
