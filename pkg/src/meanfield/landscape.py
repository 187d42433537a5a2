"""Singular potential, bubble weights, the reduced energy and the coefficients A, B.

Notation used throughout:

* ``log k(x) = log h(x) - 4 pi sum_j n_j G(x, p_j)`` is the singular potential;
* ``rho_j(x) = k(x) exp(8 pi H(x, xi_j) + 8 pi sum_{l != j} G(x, xi_l))``;
* ``F_j(y) = exp(conformal(y)) rho_j(x(y))`` is rho_j read in the chart at xi_j;
* ``phi_m`` is the reduced energy whose critical points locate concentration.
"""
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import qmc

from .errors import (AdmissibilityError, NumericalMismatchError, SingularityError,
                     SingularPotentialError, UnsupportedSurfaceError)
from .greens import evaluator
from .quadrature import PatchQuadrature, PolarPatch, patch_radius, radial_rule
from .surface import Cutoff, QuadratureGrid, chart_at

FOUR_PI = 4.0 * np.pi
EIGHT_PI = 8.0 * np.pi
# chi = 1 everywhere: the regular part becomes G + log|y| / (2 pi) on the whole chart
NO_CUTOFF = Cutoff(np.inf)


@dataclass(frozen=True, eq=False)
class SingularData:
    """Base potential ``h`` and vortex sources ``(p_j, n_j)``.

    ``h`` is a callable on arrays of surface points returning positive values;
    ``None`` means ``h = 1``.
    """

    surface: object
    sources: np.ndarray = None
    mult: np.ndarray = None
    h: object = None
    name: str = ""

    def __post_init__(self):
        dim = self.surface.dim
        src = np.zeros((0, dim)) if self.sources is None else np.atleast_2d(
            np.asarray(self.sources, dtype=float))
        n = np.zeros(0) if self.mult is None else np.atleast_1d(np.asarray(self.mult, dtype=float))
        if len(src) != len(n):
            raise AdmissibilityError("each source needs one multiplicity")
        if np.any(n <= 0):
            raise AdmissibilityError("multiplicities must be positive")
        src = self.surface.canonical(src) if len(src) else src
        for i in range(len(src)):
            for j in range(i):
                if self.surface.distance(src[i], src[j]) < 1e-6:
                    raise AdmissibilityError("sources must be distinct")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "mult", n)

    @property
    def N(self):
        return float(np.sum(self.mult))

    @property
    def integer_sources(self):
        return bool(np.all(np.abs(self.mult - np.rint(self.mult)) < 1e-12))

    def log_h(self, x):
        x = np.asarray(x, dtype=float)
        if self.h is None:
            return np.zeros(x.shape[:-1])
        return np.log(self.h(x))


@dataclass(frozen=True, eq=False)
class Configuration:
    """Concentration points xi_1, ..., xi_m."""

    surface: object
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", self.surface.canonical(pts))

    @property
    def m(self):
        return len(self.points)

    def min_separation(self):
        d = [self.surface.distance(self.points[i], self.points[j])
             for i in range(self.m) for j in range(i)]
        return float(min(d)) if d else np.inf

    def moved(self, local_steps, r0=None):
        """Configuration displaced by chart-coordinate steps (shape (m, 2))."""
        r0 = r0 or self.surface.max_chart_radius
        steps = np.asarray(local_steps, dtype=float).reshape(self.m, 2)
        pts = [chart_at(self.surface, p, r0).from_local(s) for p, s in zip(self.points, steps)]
        return Configuration(self.surface, np.array(pts))

    def permuted(self, order):
        return Configuration(self.surface, self.points[list(order)])


@dataclass
class CoefficientReport:
    phi: float
    grad: np.ndarray
    hessian: np.ndarray
    A: float
    B: float
    Btilde: float
    classification: str
    eigenvalues: np.ndarray = field(default=None, repr=False)


def admissible_radius(data, config):
    """Largest cutoff radius r0 such that the balls B_{2 r0}(xi_j) stay disjoint."""
    s = config.surface
    r = s.max_chart_radius
    if config.m > 1:
        r = min(r, 0.25 * config.min_separation())
    return r


def check_admissible(data, config, min_dist=1e-6):
    s = config.surface
    if config.m > 1 and config.min_separation() < min_dist:
        raise AdmissibilityError("concentration points must be distinct")
    for p in data.sources:
        if np.any(s.distance(config.points, p) < min_dist):
            raise AdmissibilityError("a concentration point sits on a source")


# -- potentials ------------------------------------------------------------

def log_k(data, x):
    x = np.asarray(x, dtype=float)
    out = data.log_h(x)
    if len(data.sources):
        G = evaluator(data.surface)
        try:
            for p, n in zip(data.sources, data.mult):
                out = out - FOUR_PI * n * G.green(x, p)
        except SingularityError as exc:
            raise SingularPotentialError("singular potential evaluated at a source") from exc
    return out


def log_k_masked(data, x):
    """log k with -inf at the sources (k vanishes there since every n_j > 0)."""
    x = np.asarray(x, dtype=float)
    out = data.log_h(x)
    if len(data.sources):
        G = evaluator(data.surface)
        hit = np.zeros(x.shape[:-1], dtype=bool)
        for p in data.sources:
            hit |= data.surface.distance(x, p) < 1e-12
        out = np.array(out, dtype=float)
        xs = x[~hit]
        acc = out[~hit]
        for p, n in zip(data.sources, data.mult):
            acc = acc - FOUR_PI * n * G.green(xs, p)
        out[~hit] = acc
        out[hit] = -np.inf
    return out


def potential_k(data, x):
    """k(x) = h(x) exp(-4 pi sum n_j G(x, p_j))."""
    return np.exp(log_k(data, x))


def log_rho(data, config, j, x, cutoff=None):
    x = np.asarray(x, dtype=float)
    G = evaluator(data.surface)
    cutoff = cutoff or Cutoff(data.surface.max_chart_radius)
    out = log_k(data, x) + EIGHT_PI * G.regular_part(x, config.points[j], cutoff)
    for l in range(config.m):
        if l != j:
            out = out + EIGHT_PI * G.green(x, config.points[l])
    return out


def rho_j(data, config, j, x, cutoff=None):
    """rho_j(x) = k(x) exp(8 pi H(x, xi_j) + 8 pi sum_{l != j} G(x, xi_l))."""
    return np.exp(log_rho(data, config, j, x, cutoff))


def rho_at_centers(data, config):
    """rho_j(xi_j) for every j (independent of the cutoff)."""
    return np.array([float(rho_j(data, config, j, config.points[j][None])[0])
                     for j in range(config.m)])


def local_derivatives(fun, h, levels=3):
    """Gradient and Hessian at 0 of ``fun(y)`` (y in R^2) by Richardson-extrapolated
    central differences with base step ``h``."""
    def stencil(s):
        e = np.array([[0, 0], [s, 0], [-s, 0], [0, s], [0, -s], [s, s], [s, -s], [-s, s], [-s, -s]])
        v = fun(e.astype(float))
        g = np.array([v[1] - v[2], v[3] - v[4]]) / (2 * s)
        hxx = (v[1] - 2 * v[0] + v[2]) / s**2
        hyy = (v[3] - 2 * v[0] + v[4]) / s**2
        hxy = (v[5] - v[6] - v[7] + v[8]) / (4 * s * s)
        return np.concatenate([g, [hxx, hxy, hyy]])

    table = [stencil(h / 2**i) for i in range(levels)]
    for k in range(1, levels):
        f = 4.0**k
        table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
    d = table[0]
    return d[:2], np.array([[d[2], d[3]], [d[3], d[4]]])


def _log_h_derivs(data, x, step):
    """Gradient and Hessian of log h in the chart centred at x."""
    if data.h is None:
        return np.zeros(2), np.zeros((2, 2))
    ch = chart_at(data.surface, x, data.surface.max_chart_radius)
    return local_derivatives(lambda y: data.log_h(ch.from_local(y)), step)


def grad_log_k(data, x, step=0.02):
    g, _ = _log_h_derivs(data, x, step)
    G = evaluator(data.surface)
    for p, n in zip(data.sources, data.mult):
        g = g - FOUR_PI * n * np.asarray(G.green_grad(x[None], p)).reshape(2)
    return g


# -- reduced energy --------------------------------------------------------

def phi_m(data, config):
    """(1/4 pi) sum log k(xi_j) + sum H(xi_j, xi_j) + sum_{l != j} G(xi_l, xi_j)."""
    check_admissible(data, config)
    G = evaluator(data.surface)
    pts = config.points
    val = float(np.sum(log_k(data, pts))) / FOUR_PI + config.m * G.robin()
    for j in range(config.m):
        for l in range(j):
            val += 2.0 * float(G.green(pts[l], pts[j]))
    return val


def grad_phi_m(data, config):
    """Gradient of phi_m, shape (2m,), in the chart at each xi_j."""
    check_admissible(data, config)
    G = evaluator(data.surface)
    pts = config.points
    out = np.zeros((config.m, 2))
    for j in range(config.m):
        g = grad_log_k(data, pts[j]) / FOUR_PI
        for l in range(config.m):
            if l != j:
                g = g + 2.0 * np.asarray(G.green_grad(pts[j][None], pts[l])).reshape(2)
        out[j] = g
    return out.ravel()


def hess_phi_m(data, config, step=0.02):
    """Hessian of phi_m in chart coordinates, shape (2m, 2m).

    Analytic on the torus (up to finite differences of log h); on the sphere
    by differences of phi_m in the charts at the points.
    """
    check_admissible(data, config)
    m = config.m
    s = data.surface
    if s.kind == "torus":
        G = evaluator(s)
        pts = config.points
        H = np.zeros((2 * m, 2 * m))

        def mat(v):
            v = np.asarray(v).reshape(3)
            return np.array([[v[0], v[1]], [v[1], v[2]]])

        for j in range(m):
            _, hh = _log_h_derivs(data, pts[j], step)
            blk = hh.copy()
            for p, n in zip(data.sources, data.mult):
                blk -= FOUR_PI * n * mat(G.green_hess(pts[j][None], p))
            blk /= FOUR_PI
            for l in range(m):
                if l == j:
                    continue
                D = mat(G.green_hess(pts[j][None], pts[l]))
                blk += 2.0 * D
                # translation invariance: d/dxi = -d/dx
                H[2 * j:2 * j + 2, 2 * l:2 * l + 2] = -2.0 * D
            H[2 * j:2 * j + 2, 2 * j:2 * j + 2] = blk
        return H
    r0 = s.max_chart_radius
    n = 2 * m

    def f(v):
        return phi_m(data, config.moved(v.reshape(m, 2), r0))

    H = np.zeros((n, n))
    f0 = f(np.zeros(n))
    e = np.eye(n)
    for a in range(n):
        for b in range(a, n):
            vals = []
            for hh in (step, step / 2):
                if a == b:
                    d = (f(hh * e[a]) - 2 * f0 + f(-hh * e[a])) / hh**2
                else:
                    d = (f(hh * (e[a] + e[b])) - f(hh * (e[a] - e[b]))
                         - f(hh * (e[b] - e[a])) + f(-hh * (e[a] + e[b]))) / (4 * hh * hh)
                vals.append(d)
            H[a, b] = H[b, a] = (4 * vals[1] - vals[0]) / 3
    return H


def classify(hessian, rel=1e-6):
    ev = np.linalg.eigvalsh(0.5 * (hessian + hessian.T))
    rad = np.max(np.abs(ev))
    if rad == 0 or np.min(np.abs(ev)) < rel * rad:
        return "degenerate", ev
    if np.all(ev > 0):
        return "min", ev
    if np.all(ev < 0):
        return "max", ev
    return "saddle", ev


def local_degree(data, config, radius=1e-3, samples=64):
    """Winding number of grad phi_1 around a small circle (m = 1 only)."""
    if config.m != 1:
        raise NotImplementedError("local degree is implemented for one point")
    ang = []
    for t in 2 * np.pi * np.arange(samples) / samples:
        c = config.moved([[radius * np.cos(t), radius * np.sin(t)]])
        g = grad_phi_m(data, c)
        ang.append(np.arctan2(g[1], g[0]))
    ang = np.unwrap(np.array(ang + ang[:1]))
    return int(np.rint((ang[-1] - ang[0]) / (2 * np.pi)))


# -- A ---------------------------------------------------------------------

def grad_log_rho_center(data, config, j):
    """Gradient of log rho_j at xi_j (the regular part has no gradient there)."""
    G = evaluator(data.surface)
    pts = config.points
    g = grad_log_k(data, pts[j])
    for l in range(config.m):
        if l != j:
            g = g + EIGHT_PI * np.asarray(G.green_grad(pts[j][None], pts[l])).reshape(2)
    return g


def _lap_log_h(data, x, step=0.02):
    _, hh = _log_h_derivs(data, x, step)
    return float(np.trace(hh))


def _F_local(data, config, j):
    """y -> F_j(y) in the chart at xi_j."""
    s = data.surface
    ch = chart_at(s, config.points[j], s.max_chart_radius)

    def F(y):
        y = np.asarray(y, dtype=float)
        return np.exp(ch.conformal(y) + log_rho(data, config, j, ch.from_local(y), NO_CUTOFF))

    return F


def coeff_A_parts(data, config, fd_step=None):
    """Return (A from the rewritten formula, A from chart finite differences)."""
    check_admissible(data, config)
    s = data.surface
    area = s.area
    m = config.m
    rho = rho_at_centers(data, config)
    A_id = 0.0
    A_fd = 0.0
    step = fd_step or 0.1 * admissible_radius(data, config)
    for j in range(m):
        xj = config.points[j]
        K = float(s.curvature(xj[None])[0])
        lap_logk = _lap_log_h(data, xj) - FOUR_PI * data.N / area
        g = grad_log_rho_center(data, config, j)
        A_id += FOUR_PI * rho[j] * (lap_logk + EIGHT_PI * m / area + g @ g - 2 * K)
        F = _F_local(data, config, j)
        _, hh = local_derivatives(F, step)
        A_fd += FOUR_PI * np.trace(hh)
    return A_id, A_fd


def coeff_A(data, config, rtol=1e-4):
    """A(xi) = 4 pi sum [Lap rho_j(xi_j) - 2 K(xi_j) rho_j(xi_j)].

    Evaluated through the rewritten formula and cross-checked against chart
    finite differences of rho_j.
    """
    a_id, a_fd = coeff_A_parts(data, config)
    rho = rho_at_centers(data, config)
    scale = abs(a_id) + FOUR_PI * float(np.sum(rho)) * (EIGHT_PI * config.m / data.surface.area + 1)
    if abs(a_id - a_fd) > rtol * scale:
        raise NumericalMismatchError(
            f"A routes disagree: rewritten {a_id:.10g} vs finite differences {a_fd:.10g}")
    return a_id


def coeff_A_identity(data, config):
    """(4 pi)^3 sum rho_j |grad_{xi_j} phi_m|^2 (equals A on a flat torus with N = 2m)."""
    g = grad_phi_m(data, config).reshape(config.m, 2)
    rho = rho_at_centers(data, config)
    return FOUR_PI**3 * float(np.sum(rho * np.sum(g * g, axis=1)))


# -- B ---------------------------------------------------------------------

@dataclass
class _LocalJet:
    """Value, gradient and Hessian of F_j at the chart origin."""

    F0: float
    grad: np.ndarray
    hess: np.ndarray

    @property
    def lap(self):
        return float(np.trace(self.hess))

    def p2(self, y):
        y = np.asarray(y, dtype=float)
        q = np.einsum("...i,ij,...j->...", y, self.hess, y)
        return self.F0 + y @ self.grad + 0.5 * q


def _jet(data, config, j, fd_step):
    s = data.surface
    rho = float(rho_j(data, config, j, config.points[j][None])[0])
    g = grad_log_rho_center(data, config, j)
    if s.kind == "torus":
        G = evaluator(s)
        xj = config.points[j]
        _, hl = _log_h_derivs(data, xj, fd_step)

        def mat(v):
            v = np.asarray(v).reshape(3)
            return np.array([[v[0], v[1]], [v[1], v[2]]])

        D = hl.copy()
        for p, n in zip(data.sources, data.mult):
            D -= FOUR_PI * n * mat(G.green_hess(xj[None], p))
        _, _, hr = G.smooth(np.zeros((1, 2)), 2)
        D += EIGHT_PI * mat(hr)
        for l in range(config.m):
            if l != j:
                D += EIGHT_PI * mat(G.green_hess(xj[None], config.points[l]))
    else:
        ch = chart_at(s, config.points[j], s.max_chart_radius)

        def logF(y):
            return ch.conformal(y) + log_rho(data, config, j, ch.from_local(y))

        _, D = local_derivatives(logF, fd_step)
    hess = rho * (D + np.outer(g, g))
    return _LocalJet(rho, rho * g, hess)


def _interior_integral(F, jet, r, n_theta=128, order=16, rel_min=1e-2):
    """int_{B_r} (F - P2 F) / |y|^4 dy.

    The integrand is bounded near the origin but its pointwise evaluation
    cancels badly there, so the disk of radius ``rel_min * r`` is replaced by
    the leading term of the angular average, c4 * pi * r_min^2.
    """
    r_min = rel_min * r
    rr, wr = radial_rule(r_min, r, order=order, max_len=0.25 * r)
    th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, T = np.meshgrid(rr, th, indexing="ij")
    Y = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
    vals = (F(Y) - jet.p2(Y)) / R**4
    avg = vals.mean(axis=1)
    total = 2 * np.pi * float(np.sum(wr * rr * avg))
    # fit avg(rho) = c4 + c6 rho^2 on the two innermost nodes
    c6 = (avg[1] - avg[0]) / (rr[1] ** 2 - rr[0] ** 2)
    c4 = avg[0] - c6 * rr[0] ** 2
    total += np.pi * (c4 * r_min**2 + 0.5 * c6 * r_min**4)
    return total


def _flat_f(data, config):
    """x -> k(x) exp(8 pi sum_l G(x, xi_l)) at points away from the xi_l."""
    G = evaluator(data.surface)

    def f(x):
        v = log_k_masked(data, x)
        for p in config.points:
            v = v + EIGHT_PI * G.green(x, p)
        return np.exp(v)

    return f


def _default_grid(surface, n):
    if n is None:
        n = 384 if surface.kind == "torus" else 128
    return QuadratureGrid(surface, n)


def _patches_for(data, config, inner):
    s = data.surface
    others = () if data.integer_sources else tuple(data.sources)
    R = patch_radius(s, config.points, others)
    plateau = max(0.3, min(0.6, 1.2 * inner / R)) if inner > 0 else 0.3
    return [PolarPatch(s, p, R, plateau=plateau, inner=inner) for p in config.points]


def coeff_B(data, config, r=None, grid_n=None, fd_step=None, rtol_A=1e-4):
    """B(xi) through its cutoff-free representation at radius r (0 < r <= r0)."""
    check_admissible(data, config)
    s = data.surface
    r0 = admissible_radius(data, config)
    r = r0 if r is None else float(r)
    if not (0.0 < r <= r0 * (1 + 1e-12)):
        raise AdmissibilityError(f"radius {r} outside (0, {r0:.6g}]")
    fd_step = fd_step or 0.1 * r0
    jets = [_jet(data, config, j, fd_step) for j in range(config.m)]
    A = FOUR_PI * sum(jt.lap for jt in jets)
    patches = _patches_for(data, config, r)
    if patches[0]._a < r:
        raise AdmissibilityError("excision radius exceeds the patch plateau")
    quad = PatchQuadrature(_default_grid(s, grid_n), patches)
    f = _flat_f(data, config)
    gv = f(quad.grid.points[quad.grid_active])
    pv = []
    for j, p in enumerate(patches):
        F = _F_local(data, config, j)
        # F_j / |y|^4 is f times the conformal factor; divide it back out
        rr = np.linalg.norm(p.local, axis=-1)
        pv.append(F(p.local) / rr**4 / np.exp(p.chart.conformal(p.local)))
    ext = quad.integrate(gv, pv)
    interior = 0.0
    for j in range(config.m):
        interior += _interior_integral(_F_local(data, config, j), jets[j], r)
    lead = -2 * np.pi * sum(jt.lap * np.log(jt.F0) for jt in jets) - A / 2
    return (lead + 8 * ext - EIGHT_PI * sum(jt.F0 for jt in jets) / r**2
            - A * np.log(1.0 / r) + 8 * interior)


def coeff_B_cutoff(data, config, cutoff=None, grid_n=None, fd_step=None):
    """B(xi) through the cutoff representation (independent of the cutoff profile)."""
    check_admissible(data, config)
    s = data.surface
    r0 = admissible_radius(data, config)
    cutoff = cutoff or Cutoff(r0)
    fd_step = fd_step or 0.1 * r0
    jets = [_jet(data, config, j, fd_step) for j in range(config.m)]
    A = FOUR_PI * sum(jt.lap for jt in jets)
    r_in = 0.1 * cutoff.r0
    patches = _patches_for(data, config, r_in)
    quad = PatchQuadrature(_default_grid(s, grid_n), patches)
    f = _flat_f(data, config)
    charts = [p.chart for p in patches]

    def subtracted(x, own=None, own_y=None):
        """Sum over l != own of chi_l P2_l / |y_l|^4 as a density on the surface."""
        out = np.zeros(np.shape(x)[:-1])
        for l, (ch, jt) in enumerate(zip(charts, jets)):
            if l == own:
                continue
            y = ch.to_local(x)
            rr = np.linalg.norm(y, axis=-1)
            c = cutoff(rr)
            sel = c > 0
            out[sel] += c[sel] * jt.p2(y[sel]) / rr[sel] ** 4 / np.exp(ch.conformal(y[sel]))
        return out

    xg = quad.grid.points[quad.grid_active]
    gv = f(xg) - subtracted(xg)
    pv = []
    for j, p in enumerate(patches):
        F = _F_local(data, config, j)
        rr = np.linalg.norm(p.local, axis=-1)
        conf = np.exp(p.chart.conformal(p.local))
        own = (F(p.local) - cutoff(rr) * jets[j].p2(p.local)) / rr**4
        pv.append(own / conf - subtracted(p.points, own=j))
    total = quad.integrate(gv, pv)
    # the excised disks, where chi = 1
    for j in range(config.m):
        total += _interior_integral(_F_local(data, config, j), jets[j], r_in)
    x, w = leggauss(64)
    a, b = cutoff.r0, 2 * cutoff.r0
    t = 0.5 * (b - a) * x + 0.5 * (a + b)
    wt = 0.5 * (b - a) * w
    d1 = cutoff(t, 1)
    inv2 = float(np.sum(wt * d1 / t**2))
    logint = float(np.sum(wt * d1 * np.log(t)))
    lead = -2 * np.pi * sum(jt.lap * np.log(jt.F0) for jt in jets) - A / 2
    return lead + 8 * total + EIGHT_PI * sum(jt.F0 for jt in jets) * inv2 - A * logint


def coeff_Btilde(data, config):
    """(32 pi / 3) sum 1 / rho_j(xi_j)."""
    if data.surface.kind != "torus":
        raise UnsupportedSurfaceError("B-tilde is defined on flat tori")
    return 32 * np.pi / 3 * float(np.sum(1.0 / rho_at_centers(data, config)))


def coefficient_report(data, config, with_B=True, grid_n=None):
    phi = phi_m(data, config)
    g = grad_phi_m(data, config)
    H = hess_phi_m(data, config)
    cls, ev = classify(H)
    A = coeff_A(data, config)
    B = coeff_B(data, config, grid_n=grid_n) if with_B else float("nan")
    Bt = coeff_Btilde(data, config) if data.surface.kind == "torus" else float("nan")
    return CoefficientReport(phi, g, H, A, B, Bt, cls, ev)


# -- critical points ---------------------------------------------------------

def _same_config(s, a, b, tol):
    for perm in permutations(range(len(a))):
        if np.all(s.distance(a[list(perm)], b) < tol):
            return True
    return False


def _newton(data, config, max_iter=60, tol=1e-11, max_step=None):
    s = data.surface
    max_step = max_step or 0.1 * s.max_chart_radius
    c = config
    for _ in range(max_iter):
        g = grad_phi_m(data, c)
        if np.linalg.norm(g) < tol:
            return c, g
        H = hess_phi_m(data, c)
        step = -np.linalg.lstsq(H, g, rcond=1e-10)[0]
        nrm = np.linalg.norm(step)
        if nrm > max_step:
            step *= max_step / nrm
        c = c.moved(step.reshape(c.m, 2))
        check_admissible(data, c, min_dist=1e-3)
    g = grad_phi_m(data, c)
    return (c, g) if np.linalg.norm(g) < tol else (None, g)


def find_critical_points(data, m, budget=64, seed=0, tol=1e-11, with_B=True, grid_n=None):
    """Multistart Newton search for critical points of phi_m on a torus.

    Returns a list of (Configuration, CoefficientReport), deduplicated modulo
    permutations of the points.
    """
    s = data.surface
    if s.kind != "torus":
        raise UnsupportedSurfaceError("critical-point search is implemented on tori")
    sampler = qmc.Sobol(d=2 * m, scramble=True, seed=seed)
    starts = sampler.random(budget)
    found = []
    for u in starts:
        pts = s.from_fractional(u.reshape(m, 2))
        try:
            c0 = Configuration(s, pts)
            check_admissible(data, c0, min_dist=1e-3)
            c, _ = _newton(data, c0, tol=tol)
        except (AdmissibilityError, SingularityError):
            continue
        if c is None:
            continue
        if any(_same_config(s, c.points, f.points, 1e-6) for f in found):
            continue
        found.append(c)
    out = []
    for c in found:
        rep = coefficient_report(data, c, with_B=with_B, grid_n=grid_n)
        out.append((c, rep))
    out.sort(key=lambda cr: tuple(np.round(s.fractional(cr[0].points).ravel(), 9)))
    return out
