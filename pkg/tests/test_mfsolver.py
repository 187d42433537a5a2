import numpy as np
import pytest

from meanfield.chern_simons import cs_nonlinearity
from meanfield.errors import ConfigError
from meanfield.landscape import SingularData
from meanfield.mfsolver import Problem, newton, read_snapshot, resample, write_snapshot
from meanfield.surface import Field, FlatTorus, QuadratureGrid


@pytest.fixture(scope="module")
def square():
    return SingularData(FlatTorus.rectangle(1, 1))


def test_trivial_solution_recovered(square):
    g = QuadratureGrid(square.surface, 64)
    prob = Problem(square, g, 4 * np.pi)
    x = g.points
    u0 = 0.3 * np.cos(2 * np.pi * x[..., 0]) + 0.2 * np.sin(2 * np.pi * (x[..., 0] + x[..., 1]))
    u, res, it = newton(prob, u0, tol=1e-12)
    assert res < 1e-12
    assert np.max(np.abs(u)) < 1e-10


def test_density_derivative_matches_differences(rect, rng):
    g = QuadratureGrid(rect.surface, (32, 48))
    prob = Problem(rect, g, 25.0)
    u = 0.2 * np.cos(2 * np.pi * g.points[..., 0])
    v = rng.standard_normal(g.shape)
    _, deriv = prob.density(u)
    h = 1e-6
    fd = (prob.density(u + h * v)[0] - prob.density(u - h * v)[0]) / (2 * h)
    assert np.allclose(deriv(v), fd, atol=1e-6 * np.max(np.abs(fd)))


def test_cs_density_mass_and_derivative(rect, rng):
    g = QuadratureGrid(rect.surface, (32, 48))
    prob = Problem(rect, g, 4 * np.pi * rect.N, cs_nonlinearity(rect, 0.01))
    u = 0.3 * np.sin(2 * np.pi * g.points[..., 0])
    rho, deriv = prob.density(u)
    assert prob.integral(rho) == pytest.approx(4 * np.pi * rect.N, rel=1e-12)
    v = rng.standard_normal(g.shape)
    h = 1e-6
    fd = (prob.density(u + h * v)[0] - prob.density(u - h * v)[0]) / (2 * h)
    assert np.allclose(deriv(v), fd, atol=1e-6 * np.max(np.abs(fd)))


def test_snapshot_round_trip(tmp_path, rng):
    T = FlatTorus([[1.0, 0.0], [0.2, 1.3]])
    g = QuadratureGrid(T, (8, 12))
    f = Field(g, rng.standard_normal(g.shape))
    p = tmp_path / "f.mfld"
    write_snapshot(p, f)
    back = read_snapshot(p)
    assert np.array_equal(back.values, f.values)
    assert back.grid.surface == T
    p.write_bytes(b"NOTAFILE" + p.read_bytes()[8:])
    with pytest.raises(ConfigError):
        read_snapshot(p)


def test_resample_is_exact_on_band_limited_fields():
    T = FlatTorus.rectangle(1, 1.5)
    g = QuadratureGrid(T, (16, 24))
    f = lambda x: np.cos(2 * np.pi * 3 * x[..., 0]) * np.sin(2 * np.pi * 2 * x[..., 1] / 1.5)
    fine = resample(Field(g, f(g.points)), (40, 60))
    assert np.allclose(fine.values, f(fine.grid.points), atol=1e-12)
