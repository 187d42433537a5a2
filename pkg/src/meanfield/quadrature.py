"""Partition-of-unity quadrature: graded polar patches glued to a base grid.

A patch centred at a surface point integrates ``eta(|y|) f`` in chart polar
coordinates, with ``eta = 1`` near the centre and an erfc roll-off to zero at
the patch radius. The base grid integrates ``(1 - sum eta) f``. Since every
roll-off is smooth to double precision, the base-grid part keeps the spectral
accuracy of the periodic trapezoid rule while the patches resolve the sharp
features near the centres.
"""
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erfc

from .surface import chart_at

# the erfc argument spans +-ETA_SPAN over the roll-off, so both tails are
# below 1e-17
ETA_SPAN = 6.1


def _gauss_on(breaks, order):
    x, w = leggauss(order)
    a = np.asarray(breaks[:-1])[:, None]
    b = np.asarray(breaks[1:])[:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def radial_rule(r_in, r_out, floor=1e-5, ratio=0.5, order=16, max_len=None, breaks=()):
    """Composite Gauss-Legendre nodes on [r_in, r_out] graded towards r_in.

    With ``r_in = 0`` the intervals shrink geometrically by ``ratio`` down to
    ``floor`` and one last interval covers [0, floor]. With ``r_in > 0`` the
    grading starts at ``r_in`` itself.
    """
    if r_out <= r_in:
        raise ValueError("empty radial range")
    pts = {float(r_in), float(r_out)}
    if r_in == 0.0:
        r = r_out
        while r > floor:
            r *= ratio
            pts.add(max(r, 0.0))
    else:
        r = r_in
        while r < r_out:
            pts.add(min(r, r_out))
            r /= ratio
    for b in breaks:
        if r_in < b < r_out:
            pts.add(float(b))
    pts = np.array(sorted(pts))
    if max_len is not None:
        fine = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            k = int(np.ceil((b - a) / max_len))
            fine.extend(np.linspace(a, b, k + 1)[1:])
        pts = np.array(fine)
    return _gauss_on(pts, order)


class PolarPatch:
    """Polar quadrature patch in the isothermal chart around ``center``.

    Parameters
    ----------
    surface, center :
        Patch location.
    radius : float
        Outer radius in chart coordinates; the weight ``eta`` vanishes there.
    plateau : float
        Fraction of ``radius`` on which ``eta = 1``.
    inner : float
        Radius of an excluded central disk (0 for a full disk).
    """

    def __init__(self, surface, center, radius, plateau=0.3, inner=0.0, floor=None,
                 n_theta=128, order=16, breaks=()):
        self.surface = surface
        self.radius = float(radius)
        self.chart = chart_at(surface, center, min(self.radius / 2, surface.max_chart_radius))
        self.center = self.chart.center
        self.inner = float(inner)
        a = plateau * self.radius
        self._a = a
        self._mid = 0.5 * (a + self.radius)
        self._s = 0.5 * (self.radius - a) / ETA_SPAN
        floor = 1e-5 * self.radius if floor is None else floor
        nb = np.linspace(a, self.radius, 7)
        r, wr = radial_rule(self.inner, self.radius, floor=floor, order=order,
                            max_len=0.25 * self.radius, breaks=tuple(nb) + tuple(breaks))
        th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        self.r = r
        self.theta = th
        R, T = np.meshgrid(r, th, indexing="ij")
        self.local = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
        self.points = self.chart.from_local(self.local)
        # Lebesgue measure in the chart, times the partition weight
        self.chart_weights = (wr * r * self.eta(r))[:, None] * np.full(n_theta, 2 * np.pi / n_theta)
        self.weights = self.chart_weights * np.exp(self.chart.conformal(self.local))

    def eta(self, r):
        r = np.asarray(r, dtype=float)
        out = 0.5 * erfc((r - self._mid) / self._s)
        out = np.where(r <= self._a, 1.0, out)
        return np.where(r >= self.radius, 0.0, out)

    def eta_at(self, x):
        y = self.chart.to_local(x)
        return self.eta(np.linalg.norm(y, axis=-1))


class PatchQuadrature:
    """Base grid plus polar patches forming a partition of unity."""

    def __init__(self, grid, patches):
        self.grid = grid
        self.patches = list(patches)
        cover = np.zeros(grid.shape)
        for p in self.patches:
            cover += p.eta_at(grid.points)
        self.grid_weights = grid.weights * (1.0 - cover)
        # grid nodes with zero weight never need evaluating
        self.grid_active = self.grid_weights != 0.0

    def integrate(self, grid_values, patch_values):
        """Combine values at grid nodes and at each patch's nodes.

        ``grid_values`` may be a full grid array or values on the active nodes
        only; ``patch_values[i]`` matches ``patches[i].points`` (measure
        ``weights``, i.e. including the conformal factor).
        """
        gv = np.asarray(grid_values, dtype=float)
        if gv.shape == self.grid.shape:
            total = float(np.sum(self.grid_weights[self.grid_active] * gv[self.grid_active]))
        else:
            total = float(np.sum(self.grid_weights[self.grid_active] * gv))
        for p, v in zip(self.patches, patch_values):
            total += float(np.sum(p.weights * v))
        return total

    def integrate_function(self, f):
        """Integrate a callable ``f(points)`` over the surface."""
        gv = f(self.grid.points[self.grid_active])
        return self.integrate(gv, [f(p.points) for p in self.patches])


def patch_radius(surface, centers, others=(), fraction=0.45):
    """Largest patch radius allowed around each centre.

    Patches stay clear of the other centres and of the points in ``others``
    (e.g. singular sources), and inside the injectivity radius.
    """
    centers = np.atleast_2d(centers)
    # antipodal points are the first obstruction on the sphere
    limit = surface.shortest_period if surface.kind == "torus" else np.pi
    pts = list(centers) + [np.asarray(o) for o in others]
    out = []
    for i, c in enumerate(centers):
        d = [surface.distance(c, q) for j, q in enumerate(pts) if j != i]
        dmin = min([limit] + [float(v) for v in d])
        out.append(fraction * dmin)
    r = min(out)
    if surface.kind == "sphere":
        # stereographic radius of a geodesic ball
        return 2 * np.tan(r / 2)
    return min(r, 2 * surface.max_chart_radius)
