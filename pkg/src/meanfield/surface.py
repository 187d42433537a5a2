"""Surfaces, isothermal charts, quadrature grids and the periodic Poisson solver.

Points on a flat torus are 2-vectors in the plane (any representative of the
lattice class); points on the round sphere are unit 3-vectors.
"""
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft as sfft
from scipy.special import erfc

from .errors import ChartRadiusError, UnsupportedSurfaceError, ZeroMeanError


class FlatTorus:
    """Flat torus R^2 / (Z w1 + Z w2).

    Parameters
    ----------
    periods : array_like, shape (2, 2)
        Rows are the two period vectors.
    """

    kind = "torus"
    dim = 2
    euler_characteristic = 0

    def __init__(self, periods):
        P = np.array(periods, dtype=float).reshape(2, 2)
        det = np.linalg.det(P)
        if abs(det) < 1e-14:
            raise ValueError("degenerate lattice: period vectors are dependent")
        self.periods = P
        self.area = abs(det)
        # rows b_i satisfy b_i . w_j = delta_ij
        self.dual = np.linalg.inv(P).T

    @classmethod
    def rectangle(cls, a=1.0, b=1.0):
        return cls([[a, 0.0], [0.0, b]])

    def __repr__(self):
        return f"FlatTorus(periods={self.periods.tolist()})"

    def __eq__(self, other):
        return isinstance(other, FlatTorus) and np.allclose(self.periods, other.periods)

    def __hash__(self):
        return hash(("torus",) + tuple(np.round(self.periods.ravel(), 14)))

    def curvature(self, x):
        return np.zeros(np.shape(x)[:-1])

    @cached_property
    def shortest_period(self):
        best = np.inf
        for i in range(-3, 4):
            for j in range(-3, 4):
                if i or j:
                    best = min(best, np.linalg.norm(i * self.periods[0] + j * self.periods[1]))
        return best

    @property
    def max_chart_radius(self):
        return 0.25 * self.shortest_period

    def fractional(self, x):
        return np.asarray(x, dtype=float) @ self.dual.T

    def from_fractional(self, s):
        return np.asarray(s, dtype=float) @ self.periods

    def canonical(self, x):
        """Representative with fractional coordinates in [0, 1)."""
        s = self.fractional(x)
        s = s - np.floor(s)
        s[s >= 1.0 - 1e-13] = 0.0
        return self.from_fractional(s)

    def wrap(self, d):
        """Minimum-image representative of displacement vectors."""
        d = np.asarray(d, dtype=float)
        s = self.fractional(d)
        s = s - np.rint(s)
        base = self.from_fractional(s)
        best = base
        bestn = np.einsum("...i,...i->...", base, base)
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                if i == 0 and j == 0:
                    continue
                cand = base + i * self.periods[0] + j * self.periods[1]
                cn = np.einsum("...i,...i->...", cand, cand)
                better = cn < bestn - 1e-15
                if np.any(better):
                    best = np.where(better[..., None], cand, best)
                    bestn = np.where(better, cn, bestn)
        return best

    def distance(self, x, y):
        return np.linalg.norm(self.wrap(np.asarray(x) - np.asarray(y)), axis=-1)

    def random_points(self, rng, size):
        return self.from_fractional(rng.random((size, 2)))


class RoundSphere:
    """Unit round sphere in R^3 (area 4 pi, curvature 1)."""

    kind = "sphere"
    dim = 3
    euler_characteristic = 2
    area = 4.0 * np.pi
    max_chart_radius = np.pi / 4

    def __repr__(self):
        return "RoundSphere()"

    def __eq__(self, other):
        return isinstance(other, RoundSphere)

    def __hash__(self):
        return hash("sphere")

    def curvature(self, x):
        return np.ones(np.shape(x)[:-1])

    def canonical(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def distance(self, x, y):
        c = np.clip(np.einsum("...i,...i->...", x, y), -1.0, 1.0)
        return np.arccos(c)

    def random_points(self, rng, size):
        return self.canonical(rng.standard_normal((size, 3)))


def _rotation_to_south(xi):
    """Rotation matrix Q with Q @ xi = (0, 0, -1)."""
    xi = np.asarray(xi, dtype=float)
    xi = xi / np.linalg.norm(xi)
    s = np.array([0.0, 0.0, -1.0])
    c = float(xi @ s)
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(xi, s)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


@dataclass(frozen=True)
class Chart:
    """Isothermal chart y_xi centred at a surface point.

    The metric pulls back to exp(conformal(y)) times the Euclidean one, with
    conformal(0) = 0 and a vanishing gradient there.
    """

    surface: object
    center: np.ndarray
    r0: float
    rotation: np.ndarray = dc_field(default=None, repr=False)

    def to_local(self, x):
        x = np.asarray(x, dtype=float)
        if self.surface.kind == "torus":
            return self.surface.wrap(x - self.center)
        Z = x @ self.rotation.T
        den = 1.0 - Z[..., 2]
        return 2.0 * Z[..., :2] / den[..., None]

    def from_local(self, y):
        y = np.asarray(y, dtype=float)
        if self.surface.kind == "torus":
            return self.center + y
        s2 = np.einsum("...i,...i->...", y, y)
        Z = np.empty(y.shape[:-1] + (3,))
        Z[..., 0] = 4.0 * y[..., 0] / (4.0 + s2)
        Z[..., 1] = 4.0 * y[..., 1] / (4.0 + s2)
        Z[..., 2] = (s2 - 4.0) / (s2 + 4.0)
        return Z @ self.rotation

    def conformal(self, y):
        y = np.asarray(y, dtype=float)
        if self.surface.kind == "torus":
            return np.zeros(y.shape[:-1])
        s2 = np.einsum("...i,...i->...", y, y)
        return 2.0 * np.log(4.0) - 2.0 * np.log(4.0 + s2)

    def tangent_frame(self):
        """Ambient images of the chart axes at the centre (sphere only)."""
        return self.rotation[:2, :]


def chart_at(surface, xi, r0):
    """Chart centred at ``xi`` valid on the ball of radius ``2 r0``."""
    if not (0.0 < r0 <= surface.max_chart_radius * (1 + 1e-12)):
        raise ChartRadiusError(
            f"chart radius {r0} outside (0, {surface.max_chart_radius:.6g}]")
    xi = surface.canonical(np.asarray(xi, dtype=float))
    if surface.kind == "torus":
        return Chart(surface, xi, float(r0))
    # The stereographic map from the antipode already has conformal factor
    # 16/(4+|y|^2)^2, which equals 1 with zero gradient at y = 0.
    return Chart(surface, xi, float(r0), _rotation_to_south(xi))


class QuadratureGrid:
    """Tensor-product quadrature grid on a surface.

    Torus: uniform ``shape[0] x shape[1]`` nodes in fractional coordinates
    (periodic trapezoid rule). Sphere: ``shape = (n_lon, n_lat)`` with
    Gauss-Legendre nodes in the height coordinate.
    """

    def __init__(self, surface, n=256):
        self.surface = surface
        if surface.kind == "torus":
            shape = (n, n) if np.isscalar(n) else tuple(int(v) for v in n)
            s = np.arange(shape[0]) / shape[0]
            t = np.arange(shape[1]) / shape[1]
            S, T = np.meshgrid(s, t, indexing="ij")
            self.points = S[..., None] * surface.periods[0] + T[..., None] * surface.periods[1]
            self.weights = np.full(shape, surface.area / (shape[0] * shape[1]))
        else:
            shape = (2 * n, n) if np.isscalar(n) else tuple(int(v) for v in n)
            z, wz = leggauss(shape[1])
            lon = 2 * np.pi * np.arange(shape[0]) / shape[0]
            L, Zc = np.meshgrid(lon, z, indexing="ij")
            rr = np.sqrt(1.0 - Zc**2)
            self.points = np.stack([rr * np.cos(L), rr * np.sin(L), Zc], axis=-1)
            self.weights = np.broadcast_to(wz * (2 * np.pi / shape[0]), shape).copy()
        self.shape = shape

    @classmethod
    def for_resolution(cls, torus, h):
        """Torus grid whose node spacing along each period is at most ``h``."""
        lens = np.linalg.norm(torus.periods, axis=1)
        shape = tuple(max(64, sfft.next_fast_len(int(np.ceil(L / h)), real=True)) for L in lens)
        shape = tuple(s + (s % 2) for s in shape)
        return cls(torus, shape)

    @property
    def spacing(self):
        if self.surface.kind != "torus":
            raise UnsupportedSurfaceError("spacing is defined for torus grids")
        return float(max(np.linalg.norm(self.surface.periods[i]) / self.shape[i] for i in range(2)))

    @cached_property
    def spectral(self):
        if self.surface.kind != "torus":
            raise UnsupportedSurfaceError("spectral operators are torus-only")
        return TorusSpectral(self)


@dataclass
class Field:
    """Scalar values sampled on a quadrature grid."""

    grid: QuadratureGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def mean(self):
        return float(np.sum(self.grid.weights * self.values) / self.grid.surface.area)

    @property
    def is_zero_mean(self):
        scale = max(np.max(np.abs(self.values)), 1e-300)
        return abs(self.mean) < 1e-12 * scale

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def integrate(grid, f):
    """Quadrature sum of ``f`` (Field or array of node values)."""
    vals = f.values if isinstance(f, Field) else np.asarray(f)
    return float(np.sum(grid.weights * vals))


class TorusSpectral:
    """Fourier-space operators on a uniform torus grid."""

    def __init__(self, grid):
        self.grid = grid
        n1, n2 = grid.shape
        k1 = sfft.fftfreq(n1, 1.0 / n1)
        k2 = sfft.rfftfreq(n2, 1.0 / n2)
        B = grid.surface.dual
        q = k1[:, None, None] * B[0] + k2[None, :, None] * B[1]
        self.q = q
        self.q2 = np.einsum("...i,...i->...", q, q)
        self.symbol = 4.0 * np.pi**2 * self.q2  # symbol of -Laplacian
        inv = np.zeros_like(self.symbol)
        nz = self.symbol > 0
        inv[nz] = 1.0 / self.symbol[nz]
        self.inv_symbol = inv
        self.sqrt_symbol = np.sqrt(self.symbol)
        self.inv_sqrt_symbol = np.sqrt(inv)
        # Nyquist rows carry no odd derivative information
        dmask = np.ones_like(self.symbol)
        if n1 % 2 == 0:
            dmask[n1 // 2, :] = 0.0
        if n2 % 2 == 0:
            dmask[:, -1] = 0.0
        self.deriv_mask = dmask

    def forward(self, f):
        return sfft.rfft2(f)

    def backward(self, F):
        return sfft.irfft2(F, s=self.grid.shape)

    def apply(self, f, multiplier):
        return self.backward(self.forward(f) * multiplier)

    def laplacian(self, f):
        return self.apply(f, -self.symbol)

    def inverse_neg_laplacian(self, f):
        """Zero-mean solution of -Lap u = f - mean(f)."""
        return self.apply(f, self.inv_symbol)

    def gradient(self, f):
        F = self.forward(f) * self.deriv_mask
        return np.stack([self.backward(2j * np.pi * self.q[..., i] * F) for i in range(2)], axis=-1)

    def remove_mean(self, f):
        return f - np.mean(f)


def poisson_solve(grid, rhs, tol=1e-10):
    """Zero-mean solution u of -Lap u = rhs on a torus grid."""
    if grid.surface.kind != "torus":
        raise UnsupportedSurfaceError("Poisson solver is provided on the torus only")
    vals = rhs.values if isinstance(rhs, Field) else np.asarray(rhs, dtype=float)
    scale = max(float(np.max(np.abs(vals))), 1.0)
    if abs(np.mean(vals)) > tol * scale:
        raise ZeroMeanError(f"right-hand side mean {np.mean(vals):.3e} is not zero")
    return Field(grid, grid.spectral.inverse_neg_laplacian(vals))


class TrigInterpolant:
    """Evaluate a grid function's trigonometric interpolant at arbitrary points.

    Fourier modes below ``rel_tol`` times the largest one are dropped, which
    keeps evaluation cheap for smooth fields.
    """

    def __init__(self, grid, values, rel_tol=1e-17):
        self.surface = grid.surface
        n1, n2 = grid.shape
        C = sfft.fft2(values) / (n1 * n2)
        k1 = sfft.fftfreq(n1, 1.0 / n1)
        k2 = sfft.fftfreq(n2, 1.0 / n2)
        if n1 % 2 == 0:
            C[n1 // 2, :] = 0.0
        if n2 % 2 == 0:
            C[:, n2 // 2] = 0.0
        mag = np.abs(C)
        keep = mag > rel_tol * max(mag.max(), 1e-300)
        rows = np.any(keep, axis=1)
        cols = np.any(keep, axis=0)
        kmax1 = int(np.max(np.abs(k1[rows]))) if rows.any() else 0
        kmax2 = int(np.max(np.abs(k2[cols]))) if cols.any() else 0
        r = np.abs(k1) <= kmax1
        c = np.abs(k2) <= kmax2
        self.k1 = k1[r]
        self.k2 = k2[c]
        self.coef = C[np.ix_(r, c)]

    def __call__(self, x, chunk=20000):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        s = self.surface.fractional(flat)
        out = np.empty(len(flat))
        for a in range(0, len(flat), chunk):
            sl = slice(a, a + chunk)
            E1 = np.exp(2j * np.pi * np.outer(s[sl, 0], self.k1))
            E2 = np.exp(2j * np.pi * np.outer(s[sl, 1], self.k2))
            out[sl] = np.real(np.einsum("pj,pj->p", E1 @ self.coef, E2))
        return out.reshape(x.shape[:-1])


class Cutoff:
    """Radial cutoff chi with chi = 1 on [0, r0] and chi = 0 on [2 r0, inf).

    ``profile="smooth"`` uses an erfc transition whose tails sit below double
    precision at both junctions, so the periodic trapezoid rule stays
    spectrally accurate on anything multiplied by it. ``profile="quintic"`` is
    the C^2 smoothstep polynomial.
    """

    def __init__(self, r0, profile="smooth"):
        if profile not in ("smooth", "quintic"):
            raise ValueError(f"unknown cutoff profile {profile!r}")
        self.r0 = float(r0)
        self.profile = profile
        self._c = 1.5 * self.r0
        self._s = 0.5 * self.r0 / 6.15

    def __repr__(self):
        return f"Cutoff(r0={self.r0}, profile={self.profile!r})"

    def __call__(self, r, deriv=0):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r0
        outside = r >= 2 * self.r0
        mid = ~(inside | outside)
        out = np.zeros_like(r)
        if deriv == 0:
            out[inside] = 1.0
        rm = r[mid]
        if self.profile == "smooth":
            z = (rm - self._c) / self._s
            g = np.exp(-z * z) / np.sqrt(np.pi)
            if deriv == 0:
                out[mid] = 0.5 * erfc(z)
            elif deriv == 1:
                out[mid] = -g / self._s
            else:
                out[mid] = 2 * z * g / self._s**2
        else:
            t = (rm - self.r0) / self.r0
            if deriv == 0:
                out[mid] = 1.0 - t**3 * (10 - 15 * t + 6 * t * t)
            elif deriv == 1:
                out[mid] = -30 * t * t * (1 - t) ** 2 / self.r0
            else:
                out[mid] = -60 * t * (1 - 3 * t + 2 * t * t) / self.r0**2
        return out

    def laplacian(self, r):
        """Planar Laplacian of chi(|y|)."""
        r = np.asarray(r, dtype=float)
        d1 = self(r, 1)
        rs = np.where(r > 0, r, 1.0)
        return self(r, 2) + np.where(r > 0, d1 / rs, 0.0)

