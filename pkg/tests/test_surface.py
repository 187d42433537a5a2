import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.errors import ZeroMeanError
from meanfield.surface import (Cutoff, Field, FlatTorus, QuadratureGrid, RoundSphere, TrigInterpolant,
                               integrate, poisson_solve)

coord = st.floats(-3, 3, allow_nan=False)
TORI = [FlatTorus.rectangle(1, 1), FlatTorus.rectangle(1, 1.5), FlatTorus([[1.0, 0.0], [0.3, 0.9]])]


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(TORI), coord, coord)
def test_wrap_differs_by_a_lattice_vector(torus, a, b):
    d = np.array([a, b])
    w = torus.wrap(d)
    n = torus.fractional(d - w)
    assert np.allclose(n, np.rint(n), atol=1e-9)
    # the minimum image is no longer than any nearby translate
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            alt = w + i * torus.periods[0] + j * torus.periods[1]
            assert np.linalg.norm(w) <= np.linalg.norm(alt) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(TORI), coord, coord, coord, coord)
def test_distance_symmetric_and_periodic(torus, a, b, c, d):
    x, y = np.array([a, b]), np.array([c, d])
    assert torus.distance(x, y) == pytest.approx(torus.distance(y, x), abs=1e-12)
    assert torus.distance(x + torus.periods[1], y) == pytest.approx(torus.distance(x, y), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(TORI), coord, coord)
def test_canonical_is_idempotent(torus, a, b):
    c = torus.canonical(np.array([[a, b]]))
    assert np.allclose(torus.canonical(c), c)
    s = torus.fractional(c)
    assert np.all((s >= 0) & (s < 1))


def test_grid_integrates_area():
    for s in TORI + [RoundSphere()]:
        g = QuadratureGrid(s, 32)
        assert integrate(g, np.ones(g.shape)) == pytest.approx(s.area, rel=1e-13)


def test_spectral_inverse_laplacian():
    T = TORI[2]
    g = QuadratureGrid(T, 64)
    q = 2 * np.pi * (2 * T.dual[0] - T.dual[1])
    f = np.cos(g.points @ q)
    sp = g.spectral
    assert np.allclose(sp.laplacian(f), -(q @ q) * f, atol=1e-9)
    assert np.allclose(sp.inverse_neg_laplacian(-sp.laplacian(f)), f, atol=1e-12)
    grad = sp.gradient(f)
    assert np.allclose(grad, -np.sin(g.points @ q)[..., None] * q, atol=1e-9)


def test_poisson_requires_zero_mean():
    g = QuadratureGrid(TORI[0], 32)
    with pytest.raises(ZeroMeanError):
        poisson_solve(g, np.ones(g.shape))


def test_trig_interpolant_reproduces_modes(rng):
    T = TORI[1]
    g = QuadratureGrid(T, (32, 48))
    q = 2 * np.pi * (3 * T.dual[0] + 2 * T.dual[1])
    interp = TrigInterpolant(g, np.sin(g.points @ q))
    x = T.random_points(rng, 50)
    assert np.allclose(interp(x), np.sin(x @ q), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.0), st.sampled_from(["smooth", "quintic"]))
def test_cutoff_plateau_and_support(r0, profile):
    c = Cutoff(r0, profile)
    r = np.linspace(0, 3 * r0, 301)
    v = c(r)
    assert np.all(v[r <= r0] == 1.0)
    assert np.all(v[r >= 2 * r0] == 0.0)
    assert np.all(np.diff(v) <= 1e-15)


def test_field_mean():
    g = QuadratureGrid(TORI[0], 16)
    f = Field(g, np.full(g.shape, 2.0))
    assert f.mean == pytest.approx(2.0)
    assert not f.is_zero_mean
