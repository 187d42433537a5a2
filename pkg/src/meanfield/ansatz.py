"""Projected Liouville bubbles, the ansatz W, its residual and the linear theory around it.

On a flat torus the isothermal chart at xi is the translation y = x - xi
(minimum image), so every bubble quantity is explicit in r = |y|. A projected
bubble is split as

    PU_j = 8 pi G(x, xi_j) + chi(r) g_j(r) + Psi_j,   g_j = -2 log(1 + d_j^2 / r^2),

where Psi_j solves a Poisson problem whose source lives on the cutoff annulus
r0 < r < 2 r0. Psi_j is therefore smooth on the scale of chi and is computed
spectrally on a grid that never has to resolve the bubble width d_j. Inside
B_r0(xi_j) every such correction has constant Laplacian, so near the centres
it is evaluated through a local harmonic expansion instead of a global
trigonometric sum.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, minres

from .errors import (DiscretizationError, NonConvergenceError, UnsupportedSurfaceError,
                     ZeroMeanError)
from .greens import evaluator
from .landscape import (EIGHT_PI, FOUR_PI, admissible_radius, check_admissible, log_k_masked,
                        rho_at_centers)
from .quadrature import PatchQuadrature, PolarPatch, _gauss_on, patch_radius, radial_rule
from .surface import Cutoff, Field, QuadratureGrid, TrigInterpolant, integrate


@dataclass(frozen=True, eq=False)
class BubbleParams:
    """Global dilation delta, concentration points and cutoff.

    The per-bubble widths follow ``d_j^2 = delta^2 rho_j(xi_j)``.
    """

    data: object
    config: object
    delta: float
    cutoff: Cutoff
    rho: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.data.surface.kind != "torus":
            raise UnsupportedSurfaceError("the projected ansatz is built on flat tori")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.rho is None:
            check_admissible(self.data, self.config)
            object.__setattr__(self, "rho", rho_at_centers(self.data, self.config))

    @property
    def surface(self):
        return self.data.surface

    @property
    def m(self):
        return self.config.m

    @property
    def r0(self):
        return self.cutoff.r0

    @property
    def deltas(self):
        return self.delta * np.sqrt(self.rho)

    def with_delta(self, delta):
        return BubbleParams(self.data, self.config, float(delta), self.cutoff, self.rho)


def make_params(data, config, delta, r0=None, profile="smooth"):
    r0 = admissible_radius(data, config) if r0 is None else float(r0)
    return BubbleParams(data, config, float(delta), Cutoff(r0, profile))


def check_window(params, lam, C=10.0):
    """Warn when |lam - 8 pi m| exceeds C delta^2 |log delta|."""
    d = params.delta
    gap = abs(lam - EIGHT_PI * params.m)
    if gap > C * d * d * abs(np.log(d)):
        warnings.warn(f"lambda - 8 pi m = {lam - EIGHT_PI * params.m:.3g} is outside the "
                      f"window C delta^2 |log delta| for delta = {d:.3g}", stacklevel=2)


# -- radial profiles -------------------------------------------------------

@dataclass
class RadialProfile:
    """q(r), q'(r) and the closed-form integral of q over B_r0."""

    value: object
    deriv: object
    inner: float


def tail_profile(d, r0):
    """g = U - log(8 d^2) + 4 log r = -2 log(1 + d^2 / r^2)."""
    return RadialProfile(
        lambda r: -2.0 * np.log1p(d * d / (r * r)),
        lambda r: 4.0 * d * d / (r * (r * r + d * d)),
        -2 * np.pi * (r0 * r0 * np.log1p(d * d / (r0 * r0)) + d * d * np.log1p(r0 * r0 / (d * d))))


def tail_profile_ddelta(d, r0):
    """Derivative of ``tail_profile`` with respect to d."""
    return RadialProfile(
        lambda r: -4.0 * d / (r * r + d * d),
        lambda r: 8.0 * d * r / (r * r + d * d) ** 2,
        -4 * np.pi * d * np.log1p(r0 * r0 / (d * d)))


def dilation_profile(d, r0):
    """Z_0 = 2 (d^2 - r^2) / (d^2 + r^2)."""
    return RadialProfile(
        lambda r: 2.0 * (d * d - r * r) / (d * d + r * r),
        lambda r: -8.0 * d * d * r / (d * d + r * r) ** 2,
        2 * np.pi * (2 * d * d * np.log1p(r0 * r0 / (d * d)) - r0 * r0))


def dipole_profile(d):
    """Radial factor of Z_i = 4 d y_i / (d^2 + r^2)."""
    return RadialProfile(
        lambda r: 4.0 * d * r / (r * r + d * d),
        lambda r: 4.0 * d * (d * d - r * r) / (r * r + d * d) ** 2,
        0.0)


def bubble_density(r, d):
    """e^U = 8 d^2 / (d^2 + r^2)^2."""
    return 8.0 * d * d / (d * d + r * r) ** 2


def annulus_rule(cutoff, panels=24, order=16):
    return _gauss_on(np.linspace(cutoff.r0, 2 * cutoff.r0, panels + 1), order)


def bubble_mass(d, cutoff):
    """int chi e^U over the plane, split at r0 to avoid cancellation."""
    r0 = cutoff.r0
    rr, wr = annulus_rule(cutoff)
    return EIGHT_PI * r0 * r0 / (d * d + r0 * r0) + 2 * np.pi * float(
        np.sum(wr * rr * cutoff(rr) * bubble_density(rr, d)))


# -- projections -------------------------------------------------------------

@dataclass
class Projection:
    """Grid values of a smooth correction and its Laplacian on the cutoff plateau."""

    values: np.ndarray
    lap: float
    source_integral: float = 0.0
    chi_integral: float = 0.0


def project_profile(grid, center, cutoff, prof, axis=None, tol=1e-10):
    """Correction Psi making chi q + Psi a zero-mean projection.

    ``-Lap Psi = 2 chi' q' + q Lap chi - c / |S|`` with ``c`` the integral of the
    annulus source, and ``int (chi q + Psi) = 0``. With ``axis`` set, q carries
    the angular factor ``y_axis / r`` (the source then integrates to zero).
    """
    s = grid.surface
    area = s.area
    y = s.wrap(grid.points - center)
    r = np.linalg.norm(y, axis=-1)
    ann = (r > cutoff.r0) & (r < 2 * cutoff.r0)
    ra = r[ann]
    src = np.zeros(grid.shape)
    src[ann] = 2 * cutoff(ra, 1) * prof.deriv(ra) + prof.value(ra) * cutoff.laplacian(ra)
    if axis is None:
        rr, wr = annulus_rule(cutoff)
        c = 2 * np.pi * float(np.sum(wr * rr * (2 * cutoff(rr, 1) * prof.deriv(rr)
                                                  + prof.value(rr) * cutoff.laplacian(rr))))
        chi_q = prof.inner + 2 * np.pi * float(np.sum(wr * rr * cutoff(rr) * prof.value(rr)))
    else:
        src[ann] *= y[ann][:, axis] / ra
        c = 0.0
        chi_q = 0.0
    defect = (integrate(grid, src) - c) / area
    if abs(defect) > tol:
        raise DiscretizationError(
            f"projection source has mean {defect:.3e}; the grid does not resolve the cutoff")
    psi = grid.spectral.inverse_neg_laplacian(src) - chi_q / area
    return Projection(psi, c / area, c, chi_q)


def base_grid(params):
    """Grid resolving the cutoff transition (independent of the bubble widths)."""
    return QuadratureGrid.for_resolution(params.surface, params.r0 / 64)


def fine_grid(params, points_per_width=2.5, h_max=None):
    """Grid whose spacing resolves the narrowest bubble."""
    h = min(float(np.min(params.deltas)) / points_per_width, params.r0 / 64)
    if h_max is not None:
        h = min(h, h_max)
    return QuadratureGrid.for_resolution(params.surface, h)


class DiskExpansion:
    """Evaluate a field with constant Laplacian ``lap`` inside a disk.

    ``V = P + lap r^2 / 4`` with P harmonic; P is expanded in r^k e^{ik theta}
    from its values on the boundary circle.
    """

    def __init__(self, values_on_circle, radius, lap):
        n = len(values_on_circle)
        P = values_on_circle - lap * radius * radius / 4
        c = np.fft.rfft(P) / n
        c[1:] *= 2.0
        if n % 2 == 0:
            c[-1] = 0.0
        mag = np.abs(c)
        keep = np.nonzero(mag > 1e-17 * max(mag.max(), 1e-300))[0]
        K = int(keep.max()) + 1 if len(keep) else 1
        self.coef = c[:K]
        self.radius = float(radius)
        self.lap = float(lap)

    def polar(self, r, theta):
        """Values on the tensor grid ``r`` x ``theta``."""
        k = np.arange(len(self.coef))
        rad = (np.asarray(r)[:, None] / self.radius) ** k[None, :]
        ang = np.exp(1j * np.outer(k, theta))
        P = np.real((rad * self.coef[None, :]) @ ang)
        return P + self.lap * np.asarray(r)[:, None] ** 2 / 4

    def at(self, y):
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1)
        th = np.arctan2(y[..., 1], y[..., 0])
        k = np.arange(len(self.coef))
        z = (r[..., None] / self.radius) ** k * np.exp(1j * k * th[..., None])
        return np.real(z @ self.coef) + self.lap * r * r / 4


# -- the ansatz ----------------------------------------------------------------

class Ansatz:
    """W = sum_j PU_j for given bubble parameters.

    Smooth corrections live on ``grid`` (default: ``base_grid``). Integrals
    over the surface use a partition of unity of that grid and polar patches
    of radius at most r0 around each centre, so they stay accurate for any
    bubble width.
    """

    def __init__(self, params, grid=None, n_circle=256):
        self.params = params
        self.grid = grid or base_grid(params)
        self.surface = params.surface
        self.G = evaluator(self.surface)
        self.centers = params.config.points
        self.d = params.deltas
        self.cutoff = params.cutoff
        self._n_circle = n_circle
        r0 = self.cutoff.r0
        self.psi = [project_profile(self.grid, c, self.cutoff, tail_profile(dj, r0))
                    for c, dj in zip(self.centers, self.d)]
        self.psi_total = sum(p.values for p in self.psi)
        self.psi_lap = sum(p.lap for p in self.psi)
        self._cache = {}

    # -- pointwise pieces --
    def masses(self):
        return np.array([bubble_mass(dj, self.cutoff) for dj in self.d])

    def _radii(self, x):
        ys = [self.surface.wrap(x - c) for c in self.centers]
        return ys, [np.linalg.norm(y, axis=-1) for y in ys]

    def _bubble_part(self, r, dj):
        r0 = self.cutoff.r0
        out = np.empty_like(r)
        inner = r < r0
        out[inner] = -2.0 * np.log(r[inner] ** 2 + dj * dj)
        ro = r[~inner]
        out[~inner] = -4.0 * np.log(ro) + self.cutoff(ro) * -2.0 * np.log1p(dj * dj / (ro * ro))
        return out

    def singular_part(self, x):
        """sum_j (8 pi G(x, xi_j) + chi g_j) evaluated without cancellation."""
        x = np.asarray(x, dtype=float)
        ys, rs = self._radii(x)
        out = np.zeros(x.shape[:-1])
        for y, r, dj in zip(ys, rs, self.d):
            R, _, _ = self.G.smooth(y)
            out += EIGHT_PI * R + self._bubble_part(r, dj)
        return out

    def chi_density(self, x):
        """sum_j chi_j e^{U_j}."""
        _, rs = self._radii(np.asarray(x, dtype=float))
        return sum(self.cutoff(r) * bubble_density(r, dj) for r, dj in zip(rs, self.d))

    def lap_W(self, x):
        """Lap W = -sum_j chi_j e^{U_j} + sum_j M_j / |S| (exact)."""
        return -self.chi_density(x) + float(np.sum(self.masses())) / self.surface.area

    # -- values of Psi --
    def psi_interp(self):
        if "interp" not in self._cache:
            self._cache["interp"] = TrigInterpolant(self.grid, self.psi_total, rel_tol=1e-16)
        return self._cache["interp"]

    def disk(self, j, radius, which="psi"):
        key = (which, j, radius)
        if key not in self._cache:
            vals, lap = self.smooth_total(which)
            interp = TrigInterpolant(self.grid, vals, rel_tol=1e-16)
            n = self._n_circle
            th = 2 * np.pi * np.arange(n) / n
            pts = self.centers[j] + radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
            self._cache[key] = DiskExpansion(interp(pts), radius, lap)
        return self._cache[key]

    def smooth_total(self, which):
        if which == "psi":
            return self.psi_total, self.psi_lap
        if which == "dpsi":
            p = self.dpsi()
            return p.values, p.lap
        raise KeyError(which)

    def dpsi(self):
        """Correction of the delta-derivative of W (chain rule d d_j / d delta = d_j / delta)."""
        if "dpsi" not in self._cache:
            r0 = self.cutoff.r0
            vals = np.zeros(self.grid.shape)
            lap = 0.0
            for c, dj in zip(self.centers, self.d):
                p = project_profile(self.grid, c, self.cutoff, tail_profile_ddelta(dj, r0))
                w = dj / self.params.delta
                vals += w * p.values
                lap += w * p.lap
            self._cache["dpsi"] = Projection(vals, lap)
        return self._cache["dpsi"]

    def dW_singular(self, x):
        """sum_j (d_j / delta) chi_j q_j with q_j = d g_j / d d_j."""
        _, rs = self._radii(np.asarray(x, dtype=float))
        out = 0.0
        for r, dj in zip(rs, self.d):
            out = out + (dj / self.params.delta) * self.cutoff(r) * (-4.0 * dj / (r * r + dj * dj))
        return out

    # -- fields on grids --
    def W_on(self, grid=None):
        grid = grid or self.grid
        if grid is self.grid:
            psi = self.psi_total
        else:
            psi = sum(project_profile(grid, c, self.cutoff, tail_profile(dj, self.cutoff.r0)).values
                      for c, dj in zip(self.centers, self.d))
        return self.singular_part(grid.points) + psi

    def field(self, grid=None):
        grid = grid or self.grid
        return Field(grid, self.W_on(grid))

    # -- quadrature --
    def quadrature(self):
        if "quad" not in self._cache:
            s = self.surface
            data = self.params.data
            others = () if data.integer_sources else tuple(data.sources)
            R = min(self.cutoff.r0, patch_radius(s, self.centers, others))
            patches = [PolarPatch(s, c, R, plateau=0.3) for c in self.centers]
            extra = []
            if others:
                Rs = patch_radius(s, np.atleast_2d(data.sources), tuple(self.centers))
                extra = [PolarPatch(s, p, Rs, plateau=0.3) for p in data.sources]
            self._cache["quad"] = (PatchQuadrature(self.grid, patches + extra), R, len(patches))
        return self._cache["quad"]

    def node_sets(self, which=("psi",)):
        """Yield (points, {name: smooth values}) for active grid nodes and each patch."""
        quad, R, n_centre = self.quadrature()
        act = quad.grid_active
        pts = self.grid.points[act]
        vals = {w: self.smooth_total(w)[0][act] for w in which}
        out = [(pts, vals)]
        for i, p in enumerate(quad.patches):
            P = p.points.reshape(-1, 2)
            if i < n_centre:
                v = {w: self.disk(i, R, w).polar(p.r, p.theta).reshape(-1) for w in which}
            else:
                v = {}
                for w in which:
                    vals_w, _ = self.smooth_total(w)
                    v[w] = TrigInterpolant(self.grid, vals_w, rel_tol=1e-16)(P)
            out.append((P, v))
        return out

    def integrate_nodes(self, values):
        """Integrate values given per node set (same order as ``node_sets``)."""
        quad, _, _ = self.quadrature()
        return quad.integrate(values[0], [v.reshape(p.weights.shape)
                                          for v, p in zip(values[1:], quad.patches)])

    def integrals(self, derivative=False, square=False):
        """Energy-related integrals of the ansatz.

        Returns a dict with ``grad2`` (int |grad W|^2), ``kW`` (int k e^W),
        ``chi_mass`` (int sum chi_j e^{U_j}), and optionally the delta
        derivatives ``d_grad2`` (= int sum chi_j e^{U_j} dW), ``d_kW``, ``k2W``
        (int k^2 e^{2W}) and ``d_k2W``.
        """
        which = ("psi", "dpsi") if derivative else ("psi",)
        data = self.params.data
        g2, kw, cm, dg2, dkw, k2, dk2 = [], [], [], [], [], [], []
        for pts, sm in self.node_sets(which):
            W = self.singular_part(pts) + sm["psi"]
            rho = self.chi_density(pts)
            e = np.exp(log_k_masked(data, pts) + W)
            g2.append(rho * W)
            kw.append(e)
            cm.append(rho)
            if derivative:
                dW = self.dW_singular(pts) + sm["dpsi"]
                dg2.append(rho * dW)
                dkw.append(e * dW)
            if square:
                k2.append(e * e)
                if derivative:
                    dk2.append(2 * e * e * dW)
        out = {"grad2": self.integrate_nodes(g2), "kW": self.integrate_nodes(kw),
               "chi_mass": self.integrate_nodes(cm)}
        if derivative:
            out["d_grad2"] = self.integrate_nodes(dg2)
            out["d_kW"] = self.integrate_nodes(dkw)
        if square:
            out["k2W"] = self.integrate_nodes(k2)
            if derivative:
                out["d_k2W"] = self.integrate_nodes(dk2)
        return out


def bubble_U(params, j, x):
    """U_j(x) = log 8 d_j^2 / (d_j^2 + |y|^2)^2 in the chart at xi_j."""
    s = params.surface
    y = s.wrap(np.asarray(x, dtype=float) - params.config.points[j])
    dj = params.deltas[j]
    return np.log(8 * dj * dj) - 2 * np.log(dj * dj + np.einsum("...i,...i->...", y, y))


def project_bubble(params, j, grid=None):
    """PU_j on a grid, assembled from its singular part and spectral correction."""
    grid = grid or base_grid(params)
    c = params.config.points[j]
    dj = params.deltas[j]
    G = evaluator(params.surface)
    y = params.surface.wrap(grid.points - c)
    r = np.linalg.norm(y, axis=-1)
    R, _, _ = G.smooth(y)
    tmp = Ansatz.__new__(Ansatz)
    tmp.cutoff = params.cutoff
    sing = EIGHT_PI * R + Ansatz._bubble_part(tmp, r, dj)
    psi = project_profile(grid, c, params.cutoff, tail_profile(dj, params.r0))
    return Field(grid, sing + psi.values)


def ansatz_W(params, grid=None):
    return Ansatz(params).field(grid)


# -- small-delta expansion of a single projected bubble ---------------------------

def expansion_constant(params, j):
    """alpha for bubble j on a flat torus."""
    cut = params.cutoff
    d = params.deltas[j]
    area = params.surface.area
    rr, wr = annulus_rule(cut)
    chi_log = 2 * np.pi * float(np.sum(wr * cut(rr, 1) * np.log(rr)))
    return -FOUR_PI / area * d * d * np.log(d) + 2 * d * d / area * (np.pi - chi_log)


def second_order_profile(grid, center, cutoff):
    """F solving -Lap F = Lap chi / r^2 - 4 chi' / r^3 + (4 pi / |S|) int chi' / r^2 dr."""
    s = grid.surface
    y = s.wrap(grid.points - center)
    r = np.linalg.norm(y, axis=-1)
    ann = (r > cutoff.r0) & (r < 2 * cutoff.r0)
    ra = r[ann]
    f = np.zeros(grid.shape)
    f[ann] = cutoff.laplacian(ra) / ra**2 - 4 * cutoff(ra, 1) / ra**3
    rr, wr = annulus_rule(cutoff)
    f += 2.0 / s.area * 2 * np.pi * float(np.sum(wr * cutoff(rr, 1) / rr**2))
    mean = integrate(grid, f) / s.area
    if abs(mean) > 1e-10 * max(1.0, float(np.max(np.abs(f)))):
        raise DiscretizationError(f"second-order source has mean {mean:.3e}")
    return grid.spectral.inverse_neg_laplacian(f)


@dataclass
class ExpansionErrors:
    full: float       # sup |PU - chi(U - log 8 d^2) - 8 pi H - alpha + 2 d^2 F|
    far: float        # sup_{r > 2 r0} |PU - 8 pi G - alpha|
    alpha: float
    mass_error: float  # |int chi e^U (quadrature) - closed form|


def bubble_expansion_error(params, j=0, grid=None):
    """Errors of the two-term expansion of the projected bubble j.

    With PU = 8 pi G + chi g + Psi and 8 pi H = 8 pi G + 4 chi log r, the
    difference PU - chi(U - log 8 d^2) - 8 pi H equals Psi exactly.
    """
    grid = grid or base_grid(params)
    c = params.config.points[j]
    d = params.deltas[j]
    cut = params.cutoff
    psi = project_profile(grid, c, cut, tail_profile(d, params.r0)).values
    F = second_order_profile(grid, c, cut)
    alpha = expansion_constant(params, j)
    full = float(np.max(np.abs(psi - alpha + 2 * d * d * F)))
    r = np.linalg.norm(params.surface.wrap(grid.points - c), axis=-1)
    far = float(np.max(np.abs(psi - alpha)[r > 2 * cut.r0]))
    # independent mass check by graded radial quadrature
    rr, wr = radial_rule(0.0, 2 * cut.r0, floor=1e-3 * d, max_len=cut.r0 / 16, breaks=(cut.r0,))
    q = 2 * np.pi * float(np.sum(wr * rr * cut(rr) * bubble_density(rr, d)))
    return ExpansionErrors(full, far, alpha, abs(q - bubble_mass(d, cut)))


# -- weighted norm ----------------------------------------------------------------

@dataclass
class StarNorm:
    """Bubble-weighted sup norm; the weight is 1 / sum_j d_j^s / (d_j^2 + dist_j^2)^(1 + s/2)."""

    surface: object
    centers: np.ndarray
    deltas: np.ndarray
    r0: float
    sigma: float = 0.5

    @classmethod
    def for_params(cls, params, sigma=0.5):
        return cls(params.surface, params.config.points, params.deltas, params.r0, sigma)

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        acc = 0.0
        for c, d in zip(self.centers, self.deltas):
            r = np.linalg.norm(self.surface.wrap(x - c), axis=-1)
            dist = np.where(r < self.r0, r, self.r0)
            acc = acc + d**self.sigma / (d * d + dist * dist) ** (1 + self.sigma / 2)
        return 1.0 / acc

    def __call__(self, values, points):
        return float(np.max(np.abs(values) * self.weight(points)))


def star_norm(norm, h, points=None):
    """Weighted sup norm of ``h`` (a Field, or values at ``points``)."""
    if isinstance(h, Field):
        return norm(h.values, h.grid.points)
    return norm(np.asarray(h), points)


# -- residual ----------------------------------------------------------------------

@dataclass
class ResidualReport:
    integral: float
    star: float
    int_kW: float
    sup: float


def residual_R(params, lam, grid=None, ansatz=None):
    """R = Lap W + lam (k e^W / int k e^W - 1 / |S|) as a Field on ``grid``.

    The normalisation uses the patch quadrature, so R is accurate at any node
    whether or not the grid resolves the bubbles.
    """
    check_window(params, lam)
    ans = ansatz or Ansatz(params)
    grid = grid or ans.grid
    I = ans.integrals()["kW"]
    W = ans.W_on(grid)
    kW = np.exp(log_k_masked(params.data, grid.points) + W)
    vals = ans.lap_W(grid.points) + lam * (kW / I - 1.0 / params.surface.area)
    return Field(grid, vals)


def residual_report(params, lam, sigma=0.5, ansatz=None):
    """Integral and weighted norm of R over base-grid and patch nodes."""
    check_window(params, lam)
    ans = ansatz or Ansatz(params)
    data = params.data
    area = params.surface.area
    norm = StarNorm.for_params(params, sigma)
    sets = ans.node_sets()
    ints = ans.integrals()
    I = ints["kW"]
    vals, star, sup = [], 0.0, 0.0
    grid_pts = ans.grid.points.reshape(-1, 2)
    W_grid = ans.singular_part(grid_pts) + ans.psi_total.reshape(-1)
    Rg = ans.lap_W(grid_pts) + lam * (np.exp(log_k_masked(data, grid_pts) + W_grid) / I - 1 / area)
    star = norm(Rg, grid_pts)
    sup = float(np.max(np.abs(Rg)))
    for pts, sm in sets:
        W = ans.singular_part(pts) + sm["psi"]
        R = ans.lap_W(pts) + lam * (np.exp(log_k_masked(data, pts) + W) / I - 1 / area)
        vals.append(R)
        star = max(star, norm(R, pts))
        sup = max(sup, float(np.max(np.abs(R))))
    return ResidualReport(ans.integrate_nodes(vals), star, I, sup)


# -- kernel elements -------------------------------------------------------------------

def kernel_Z(params, j, i, x):
    """Z_ij(x) = Y_i(y / d_j)."""
    y = params.surface.wrap(np.asarray(x, dtype=float) - params.config.points[j])
    d = params.deltas[j]
    r2 = np.einsum("...i,...i->...", y, y)
    if i == 0:
        return 2 * (d * d - r2) / (d * d + r2)
    return 4 * d * y[..., i - 1] / (d * d + r2)


@dataclass
class KernelElements:
    """Projected kernel functions on a grid.

    ``labels`` lists (i, j); ``pz`` holds PZ_ij on the grid, and ``dilation``
    is PZ, the projection of sum_j Z_0j. ``gram[a, b] = int Lap PZ_a PZ_b``
    over the individual elements (i = 0, 1, 2).
    """

    grid: QuadratureGrid
    labels: list
    pz: list
    dilation: np.ndarray
    gram: np.ndarray
    constraint_fields: list
    approx_errors: dict


def _pz_single(params, grid, j, i):
    d = params.deltas[j]
    c = params.config.points[j]
    cut = params.cutoff
    if i == 0:
        proj = project_profile(grid, c, cut, dilation_profile(d, params.r0))
    else:
        proj = project_profile(grid, c, cut, dipole_profile(d), axis=i - 1)
    r = np.linalg.norm(params.surface.wrap(grid.points - c), axis=-1)
    return cut(r) * kernel_Z(params, j, i, grid.points) + proj.values, proj


def kernel_elements(params, grid=None, ansatz=None):
    """PZ_ij (i = 0, 1, 2), the dilation element PZ, and their Gram matrix.

    The Gram matrix uses the exact Laplacian ``Lap PZ_ij = -chi e^U Z_ij + c / |S|``
    and the patch quadrature, so it is accurate without resolving d_j.
    """
    grid = grid or base_grid(params)
    ans = ansatz or Ansatz(params)
    m = params.m
    labels = [(i, j) for j in range(m) for i in range(3)]
    fields, projs = [], []
    for i, j in labels:
        f, p = _pz_single(params, grid, j, i)
        fields.append(f)
        projs.append(p)
    dilation = sum(f for f, (i, _) in zip(fields, labels) if i == 0)
    # Gram matrix through the quadrature of the ansatz
    area = params.surface.area
    cut = params.cutoff
    own = [_pz_single(params, ans.grid, j, i)[1] for i, j in labels]
    G = np.zeros((len(labels), len(labels)))
    quad, R, n_c = ans.quadrature()
    sets = []
    act = quad.grid_active
    pts0 = ans.grid.points[act]
    sets.append((pts0, [p.values[act] for p in own]))
    for k, p in enumerate(quad.patches[:n_c]):
        vals = []
        for pr in own:
            interp = TrigInterpolant(ans.grid, pr.values, rel_tol=1e-16)
            n = 256
            th = 2 * np.pi * np.arange(n) / n
            circ = params.config.points[k] + R * np.stack([np.cos(th), np.sin(th)], axis=-1)
            vals.append(DiskExpansion(interp(circ), R, pr.lap).polar(p.r, p.theta).reshape(-1))
        sets.append((p.points.reshape(-1, 2), vals))
    lap_vals, pz_vals = [], []
    for pts, corr in sets:
        lv, pv = [], []
        for (i, j), pr, cv in zip(labels, own, corr):
            r = np.linalg.norm(params.surface.wrap(pts - params.config.points[j]), axis=-1)
            Z = kernel_Z(params, j, i, pts)
            lv.append(-cut(r) * bubble_density(r, params.deltas[j]) * Z + pr.source_integral / area)
            pv.append(cut(r) * Z + cv)
        lap_vals.append(lv)
        pz_vals.append(pv)
    for a in range(len(labels)):
        for b in range(len(labels)):
            G[a, b] = ans.integrate_nodes([lv[a] * pv[b] for lv, pv in zip(lap_vals, pz_vals)])
    # distance of PZ_ij to chi Z_ij and of PZ_0j to chi (Z_0j + 2)
    errs = {}
    for (i, j), f in zip(labels, fields):
        r = np.linalg.norm(params.surface.wrap(grid.points - params.config.points[j]), axis=-1)
        Z = kernel_Z(params, j, i, grid.points)
        ref = cut(r) * (Z + 2) if i == 0 else cut(r) * Z
        errs[(i, j)] = float(np.max(np.abs(f - ref)))
    constraint = [dilation] + [f for f, (i, _) in zip(fields, labels) if i > 0]
    return KernelElements(grid, labels, fields, dilation, G, constraint, errs)


# -- linearised operator ---------------------------------------------------------------

class LinearizedOperator:
    """L(phi) = Lap phi + lam K (phi - int K phi), K = k e^W / int k e^W, on a grid.

    Integrals inside L use the grid quadrature so that int L(phi) = 0 holds
    to rounding. In the variable ``v = (-Lap)^{1/2} phi`` the operator reads
    ``L = -(-Lap)^{1/2} (I - S) (-Lap)^{1/2}`` with S symmetric and positive
    semidefinite, which is what the spectral and solve routines use.
    """

    def __init__(self, params, lam, grid=None, ansatz=None):
        self.params = params
        self.lam = float(lam)
        self.ansatz = ansatz or Ansatz(params)
        self.grid = grid or fine_grid(params)
        g = self.grid
        self.sp = g.spectral
        self.W = self.ansatz.W_on(g)
        self.logk = log_k_masked(params.data, g.points)
        e = np.exp(self.logk + self.W)
        self.kW = integrate(g, e)
        self.K = e / self.kW
        self.w = g.weights

    def mean_K(self, phi):
        return float(np.sum(self.w * self.K * phi))

    def apply_L(self, phi):
        phi = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
        mean = integrate(self.grid, phi) / self.grid.surface.area
        if abs(mean) > 1e-10 * max(1.0, float(np.max(np.abs(phi)))):
            raise ZeroMeanError(f"L acts on zero-mean functions; mean is {mean:.3e}")
        return self.sp.laplacian(phi) + self.lam * self.K * (phi - self.mean_K(phi))

    def half(self, f, power):
        sym = self.sp.sqrt_symbol if power > 0 else self.sp.inv_sqrt_symbol
        return self.sp.apply(f, sym)

    def S(self, v):
        v = v.reshape(self.grid.shape)
        phi = self.half(v, -1)
        return self.half(self.lam * self.K * (phi - self.mean_K(phi)), -1)

    def _operator(self, Q=None):
        n = int(np.prod(self.grid.shape))

        def mv(v):
            v = np.asarray(v).reshape(self.grid.shape)
            if Q is not None:
                v = Q(v)
            out = self.S(v)
            if Q is not None:
                out = Q(out)
            return out.reshape(-1)

        return LinearOperator((n, n), matvec=mv, dtype=float)

    def projector(self, fields):
        """Orthogonal projector (in v) onto the complement of (-Lap)^{1/2} PZ_a."""
        E = np.stack([self.half(f, 1).reshape(-1) for f in fields], axis=1)
        Qm, _ = np.linalg.qr(E)

        def Q(v):
            flat = v.reshape(-1)
            return (flat - Qm @ (Qm.T @ flat)).reshape(v.shape)

        return Q, E

    def residual(self):
        """R on this grid, with grid-consistent normalisation and zero mean."""
        ans = self.ansatz
        g = self.grid
        R = ans.lap_W(g.points) + self.lam * (self.K - 1.0 / g.surface.area)
        return R - integrate(g, R) / g.surface.area

    def N(self, phi):
        """Nonlinear remainder (terms of order two and higher in phi)."""
        g = self.grid
        e = np.exp(self.logk + self.W + phi)
        Kp = e / integrate(g, e)
        return self.lam * (Kp - self.K * phi + self.K * self.mean_K(phi) - self.K)


def near_kernel_spectrum(op, kernel=None, k=None, tol=1e-8):
    """Eigenvalues mu of L in the generalised sense L phi = -mu (-Lap) phi.

    mu = 1 - nu with nu an eigenvalue of S; the smallest |mu| come from the
    largest nu, which Lanczos finds directly. With ``kernel`` (a
    KernelElements or a list of grid fields) the problem is restricted to
    the phi with int phi Lap PZ_a = 0. Returns |mu| sorted increasingly.
    """
    m = op.params.m
    k = k or (2 * m + 4)
    Q = None
    if kernel is not None:
        fields = kernel.constraint_fields if isinstance(kernel, KernelElements) else kernel
        Q, _ = op.projector(fields)
    A = op._operator(Q)
    nu = eigsh(A, k=k, which="LA", tol=tol, return_eigenvectors=False)
    return np.sort(np.abs(1.0 - nu))


@dataclass
class CorrectionResult:
    phi: Field
    c0: float
    c: np.ndarray
    iterations: int
    ratios: list
    orthogonality: np.ndarray
    equation_residual: float
    op: LinearizedOperator = field(repr=False, default=None)
    kernel: KernelElements = field(repr=False, default=None)


def solve_projected_correction(params, lam, grid=None, tol=1e-10, max_iter=50,
                               delta_max=0.1, ansatz=None, linear_rtol=1e-13):
    """phi, c0, c_ij solving L(phi) = -(R + N(phi)) + c0 Lap PZ + sum c_ij Lap PZ_ij
    with phi orthogonal to every Lap PZ_a, by fixed-point iteration."""
    if params.delta > delta_max:
        raise ValueError(f"delta = {params.delta} exceeds delta_max = {delta_max}")
    check_window(params, lam)
    ans = ansatz or Ansatz(params)
    op = LinearizedOperator(params, lam, grid, ans)
    g = op.grid
    ker = kernel_elements(params, g, ans)
    Q, E = op.projector(ker.constraint_fields)
    A = op._operator(Q)
    n = A.shape[0]
    I_minus_S = LinearOperator((n, n), matvec=lambda v: v - A.matvec(v), dtype=float)
    gram = E.T @ E
    R = op.residual()
    phi = np.zeros(g.shape)
    v = np.zeros(n)
    ratios = []
    last = None
    for it in range(1, max_iter + 1):
        h = -(R + op.N(phi))
        b = -Q(op.half(h, -1)).reshape(-1)
        v, info = minres(I_minus_S, b, x0=v, rtol=linear_rtol, maxiter=2000)
        if info != 0:
            raise NonConvergenceError(f"projected linear solve failed (MINRES flag {info})")
        v = Q(v.reshape(g.shape)).reshape(-1)
        new = op.half(v.reshape(g.shape), -1)
        diff = float(np.max(np.abs(new - phi)))
        if last is not None and last > 0:
            ratios.append(diff / last)
        last = diff
        phi = new
        if diff < tol:
            break
    else:
        rr = ratios[-1] if ratios else float("nan")
        raise NonConvergenceError(f"no contraction after {max_iter} iterations "
                                  f"(last ratio {rr:.3g})")
    h = -(R + op.N(phi))
    rhs = (v - op.S(v).reshape(-1)) + op.half(h, -1).reshape(-1)
    coef = np.linalg.solve(gram, E.T @ rhs)
    lapPZ = [op.sp.laplacian(f) for f in ker.constraint_fields]
    orth = np.array([integrate(g, phi * lp) for lp in lapPZ])
    eq = op.apply_L(phi) + R + op.N(phi) - sum(c * lp for c, lp in zip(coef, lapPZ))
    return CorrectionResult(Field(g, phi), float(coef[0]), coef[1:], it, ratios, orth,
                            float(np.max(np.abs(eq))), op, ker)
