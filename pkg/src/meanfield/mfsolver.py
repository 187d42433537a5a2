"""Spectral Newton-Krylov solves of the mean-field equation on flat tori, with continuation in lambda.

The unknown is the zero-mean grid function u. Newton works on the
preconditioned residual

    G(u) = (-Lap)^{-1} F(u) = -u + lam (-Lap)^{-1} (k e^u / int k e^u),

whose Jacobian is minus the identity plus a compact perturbation, so GMRES
needs only a handful of iterations away from the bubble near-kernel.
"""
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (ConfigError, MeanFieldError, NonConvergenceError, StepUnderflowError,
                     UnsupportedSurfaceError)
from .landscape import EIGHT_PI, log_k_masked
from .surface import Cutoff, Field, FlatTorus, QuadratureGrid, integrate

MAGIC = b"MFLD0001"


class Problem:
    """Grid discretisation of F(u) = Lap u + lam (k e^u / int k e^u - 1/|S|).

    ``nonlinearity`` maps (u, problem) to the measure term replacing
    ``lam k e^u / int k e^u`` (the Chern-Simons module supplies its own).
    """

    def __init__(self, data, grid, lam, nonlinearity=None):
        if data.surface.kind != "torus":
            raise UnsupportedSurfaceError("nonlinear solves are implemented on flat tori")
        self.data = data
        self.grid = grid
        self.lam = float(lam)
        self.sp = grid.spectral
        self.logk = log_k_masked(data, grid.points)
        self.area = data.surface.area
        self.nonlinearity = nonlinearity

    def integral(self, f):
        return integrate(self.grid, f)

    def density(self, u):
        """lam k e^u / int k e^u and its derivative operator."""
        if self.nonlinearity is not None:
            return self.nonlinearity(u, self)
        shift = float(np.max(self.logk + u))
        e = np.exp(self.logk + u - shift)
        K = e / self.integral(e)
        lam = self.lam

        def deriv(v):
            return lam * K * (v - self.integral(K * v))

        return lam * K, deriv

    def F(self, u):
        rho, _ = self.density(u)
        return self.sp.laplacian(u) + rho - self.lam / self.area

    def G(self, u):
        rho, _ = self.density(u)
        return -u + self.sp.inverse_neg_laplacian(rho)


@dataclass
class Peak:
    location: np.ndarray
    value: float
    masses: dict
    fit: object = None


@dataclass
class BubbleFit:
    delta: float
    center: np.ndarray
    residual: float


@dataclass
class SolveResult:
    lam: float
    u: Field
    residual: float
    residual_raw: float
    iterations: int
    peaks: list = field(default_factory=list)
    fit: BubbleFit = None
    height: float = None
    total_mass: float = None


def _norm(grid, f):
    return float(np.sqrt(integrate(grid, f * f)))


def newton(problem, u0, tol=1e-10, max_iter=60, gmres_restart=60, gmres_cycles=10, verbose=False):
    """Newton-Krylov iteration with Armijo backtracking on |G|_2.

    Converged when sup |G(u)| < tol. Returns (u, sup|G|, iterations).
    """
    g = problem.grid
    n = int(np.prod(g.shape))
    u = np.array(u0, dtype=float)
    u -= integrate(g, u) / problem.area
    Gu = problem.G(u)
    res = float(np.max(np.abs(Gu)))
    for it in range(1, max_iter + 1):
        if res < tol:
            return u, res, it - 1
        _, deriv = problem.density(u)

        def mv(v, deriv=deriv):
            v = v.reshape(g.shape)
            v = v - np.mean(v)
            return (-v + problem.sp.inverse_neg_laplacian(deriv(v))).reshape(-1)

        J = LinearOperator((n, n), matvec=mv, dtype=float)
        # forcing term with a floor: near convergence the right-hand side is
        # tiny and cannot be resolved relative to itself below rounding
        rtol = min(1e-2, max(res, 1e-6))
        count = [0]
        step, info = gmres(J, -Gu.reshape(-1), rtol=rtol, atol=0.0, restart=gmres_restart,
                           maxiter=gmres_cycles, callback=lambda _: count.__setitem__(0, count[0] + 1),
                           callback_type="pr_norm")
        if info < 0:
            raise NonConvergenceError("GMRES breakdown in the Newton step")
        step = step.reshape(g.shape)
        step -= np.mean(step)
        n0 = _norm(g, Gu)
        t = 1.0
        while True:
            trial = u + t * step
            Gt = problem.G(trial)
            if _norm(g, Gt) <= (1 - 1e-4 * t) * n0 or t < 1e-4:
                break
            t *= 0.5
        if t < 1e-4:
            raise NonConvergenceError(
                "line search stalled; the Jacobian is nearly singular here, continue in "
                "lambda with a smaller step")
        u, Gu = trial, Gt
        res = float(np.max(np.abs(Gu)))
        if verbose:
            print(f"newton {it}: |G| = {res:.3e}, step {t:g}, {count[0]} Krylov steps", flush=True)
    if res < tol:
        return u, res, max_iter
    raise NonConvergenceError(f"Newton did not converge in {max_iter} iterations (|G| = {res:.3e})")


def solve(lam, data, initial, tol=1e-10, max_iter=60, nonlinearity=None, radii=(0.1,), verbose=False):
    """Solve the mean-field equation from ``initial`` (a Field on a torus grid).

    The reported ``residual`` is sup |(-Lap)^{-1} F(u)|, the quantity Newton
    drives below ``tol``; ``residual_raw`` is sup |F(u)|, which carries
    rounding of order eps times the largest density value.
    """
    if not isinstance(initial, Field):
        raise TypeError("initial guess must be a Field")
    if not np.all(np.isfinite(initial.values)):
        raise ConfigError("initial guess is not finite")
    prob = Problem(data, initial.grid, lam, nonlinearity)
    u, res, it = newton(prob, initial.values, tol, max_iter, verbose=verbose)
    result = SolveResult(float(lam), Field(prob.grid, u), res,
                         float(np.max(np.abs(prob.F(u)))), it)
    rho, _ = prob.density(u)
    result.total_mass = prob.integral(rho)
    result.peaks = find_peaks(prob, u, radii)
    for p in result.peaks:
        try:
            p.fit = fit_bubble(prob, u, p.location)
        except MeanFieldError:
            p.fit = None
    if result.peaks:
        result.fit = result.peaks[0].fit
    e = np.exp(prob.logk + u)
    result.height = float(np.max(u) - np.log(prob.integral(e)))
    return result


# -- concentration diagnostics -------------------------------------------------------

def _density(prob, u):
    rho, _ = prob.density(u)
    return rho


def find_peaks(prob, u, radii=(0.1,), factor=10.0):
    """Local maxima of the density above ``factor`` times its median, with ball masses."""
    g = prob.grid
    rho = _density(prob, u)
    is_max = rho > factor * np.median(rho)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 or s2:
                is_max &= rho >= np.roll(np.roll(rho, s1, 0), s2, 1)
    idx = np.argwhere(is_max)
    peaks = []
    for i, j in idx:
        loc = g.points[i, j]
        dist = g.surface.distance(g.points, loc)
        masses = {r: prob.integral(np.where(dist < r, rho, 0.0)) for r in radii}
        peaks.append(Peak(loc, float(rho[i, j]), masses))
    peaks.sort(key=lambda p: -p.value)
    return peaks


def concentration_report(result, data, radii=(0.1,)):
    """Peaks of the density of ``result`` with masses in balls of the given radii."""
    prob = Problem(data, result.u.grid, result.lam)
    return find_peaks(prob, result.u.values, radii)


def fit_bubble(prob, u, guess):
    """Least-squares fit of log density = c + log 8 d^2 - 2 log(d^2 + |x - q|^2) near a peak."""
    g = prob.grid
    rho = _density(prob, u)
    y = g.surface.wrap(g.points - guess)
    r = np.linalg.norm(y, axis=-1)
    d0 = np.sqrt(8.0 / float(np.max(rho)))
    sel = r < 5 * d0
    if np.count_nonzero(sel) < 8:
        raise MeanFieldError("too few grid nodes under the peak for a bubble fit")
    ys = y[sel]
    target = np.log(rho[sel])

    def resid(p):
        c, ld, q1, q2 = p
        d2 = np.exp(2 * ld)
        rr = (ys[:, 0] - q1) ** 2 + (ys[:, 1] - q2) ** 2
        return c + np.log(8 * d2) - 2 * np.log(d2 + rr) - target

    sol = least_squares(resid, [0.0, np.log(d0), 0.0, 0.0], x_scale=[1.0, 1.0, d0, d0])
    c, ld, q1, q2 = sol.x
    center = g.surface.canonical(np.asarray(guess) + [q1, q2])
    return BubbleFit(float(np.exp(ld)), center, float(np.max(np.abs(sol.fun))))


def bubble_width(prob, u):
    """d with 8 / d^2 equal to the largest density value."""
    return float(np.sqrt(8.0 / np.max(_density(prob, u))))


# -- grids --------------------------------------------------------------------------

def resample(field, shape):
    """Trigonometric interpolation of a grid field onto a grid of another shape."""
    g = field.grid
    new = QuadratureGrid(g.surface, tuple(shape))
    n1, n2 = g.shape
    m1, m2 = new.shape
    F = np.fft.rfft2(field.values)
    if n1 % 2 == 0:
        F[n1 // 2, :] = 0.0
    if n2 % 2 == 0:
        F[:, -1] = 0.0
    out = np.zeros((m1, m2 // 2 + 1), dtype=complex)
    k1 = min(n1, m1) // 2
    k2 = min(n2 // 2, m2 // 2)
    out[:k1, :k2] = F[:k1, :k2]
    if k1 > 1:
        out[m1 - k1 + 1:, :k2] = F[n1 - k1 + 1:, :k2]
    vals = np.fft.irfft2(out, s=(m1, m2)) * (m1 * m2) / (n1 * n2)
    return Field(new, vals)


def grid_for_width(surface, width, points_per_width=3.0, min_h=None):
    h = width / points_per_width
    if min_h is not None:
        h = max(h, min_h)
    return QuadratureGrid.for_resolution(surface, h)


# -- continuation ----------------------------------------------------------------------

@dataclass
class Branch:
    results: list


def continue_in_lambda(data, seed, path, radii=(0.1,), tol=1e-10, min_step=1e-6,
                       points_per_width=3.0, nonlinearity_factory=None, max_ratio=1.5,
                       verbose=False):
    """Natural-parameter continuation along ``path`` (a sequence of lambda values).

    ``seed`` is a Field solving (or approximating) the equation at ``path[0]``.
    Steps towards 8 pi m shrink the gap |lam - 8 pi m| by at most ``max_ratio``.
    Each warm start narrows the bubbles of the previous solution to the width
    predicted by the square-root law, on a grid refined by spectral
    interpolation so that its spacing stays below the width over
    ``points_per_width``. A failed step is halved; a step below ``min_step``
    raises StepUnderflowError carrying the results so far in ``.results``.
    """
    path = [float(x) for x in path]
    nl = nonlinearity_factory
    lam = path[0]
    results = [_solve_refined(data, lam, seed, tol, radii, points_per_width, nl, verbose)]
    for target in path[1:]:
        step = target - lam
        while lam != target:
            s = step if abs(step) < abs(target - lam) else target - lam
            m = max(1, int(round(lam / EIGHT_PI)))
            gap = lam - EIGHT_PI * m
            if gap * s < 0 and abs(s) > abs(gap) * (1 - 1 / max_ratio):
                s = -gap * (1 - 1 / max_ratio)
            try:
                guess = _predict(results[-1], data, lam, lam + s, points_per_width, nl)
                r = _solve_refined(data, lam + s, guess, tol, radii, points_per_width, nl, verbose)
            except NonConvergenceError as exc:
                step = s / 2
                if abs(step) < min_step:
                    err = StepUnderflowError(
                        f"continuation step fell below {min_step:g} at lambda = {lam:.10g} ({exc})")
                    err.results = results
                    raise err from exc
                continue
            lam = target if abs(lam + s - target) < 1e-14 else lam + s
            results.append(r)
            if verbose:
                print(f"lambda - 8 pi m = {lam - EIGHT_PI * m:.6g}: grid {r.u.grid.shape}, "
                      f"{r.iterations} Newton steps, residual {r.residual:.2e}", flush=True)
    return Branch(results)


def _problem(data, grid, lam, nl):
    return Problem(data, grid, lam, nl(lam) if nl else None)


def narrow_bubbles(u, peaks, ratio):
    """Add chi(r) (2 log(d^2 + r^2) - 2 log((ratio d)^2 + r^2)) around each fitted peak.

    This maps a bubble of width d onto one of width ratio * d while leaving the
    field untouched away from the peaks; the mean is removed afterwards.
    """
    g = u.grid
    s = g.surface
    vals = u.values.copy()
    centers = [p.fit.center for p in peaks if p.fit is not None]
    for p in peaks:
        if p.fit is None:
            continue
        others = [s.distance(p.fit.center, c) for c in centers if c is not p.fit.center]
        r0 = 0.25 * min([s.shortest_period] + [float(o) for o in others if o > 0])
        cut = Cutoff(r0)
        r = np.linalg.norm(s.wrap(g.points - p.fit.center), axis=-1)
        d = p.fit.delta
        vals += cut(r) * (2 * np.log(d * d + r * r) - 2 * np.log((ratio * d) ** 2 + r * r))
    vals -= integrate(g, vals) / s.area
    return Field(g, vals)


def _predict(prev, data, lam0, lam1, ppw, nl=None):
    """Warm start for lam1 from the solution at lam0."""
    u = prev.u
    prob = _problem(data, u.grid, lam0, nl)
    width = bubble_width(prob, u.values)
    m = max(1, int(round(lam0 / EIGHT_PI)))
    e0, e1 = abs(lam0 - EIGHT_PI * m), abs(lam1 - EIGHT_PI * m)
    ratio = np.sqrt(e1 / e0) if e0 > 0 and e1 > 0 else 1.0
    width *= min(ratio, 1.0)
    if u.grid.spacing > width / ppw:
        new = grid_for_width(data.surface, width, ppw)
        if new.shape[0] > u.grid.shape[0]:
            u = resample(u, new.shape)
    if ratio != 1.0:
        u = narrow_bubbles(u, prev.peaks, ratio)
    return u


def _solve_refined(data, lam, u, tol, radii, ppw, nl, verbose):
    for _ in range(4):
        res = solve(lam, data, u, tol=tol, nonlinearity=nl(lam) if nl else None, radii=radii,
                    verbose=verbose)
        prob = _problem(data, res.u.grid, lam, nl)
        width = bubble_width(prob, res.u.values)
        if res.u.grid.spacing <= width / ppw:
            return res
        new = grid_for_width(data.surface, width, ppw)
        u = resample(res.u, new.shape)
    return res


# -- snapshots ---------------------------------------------------------------------------

def write_snapshot(path, field):
    """Binary field file: magic, n1 and n2 (int64), the two period vectors, row-major doubles."""
    g = field.grid
    if g.surface.kind != "torus":
        raise UnsupportedSurfaceError("snapshots are written for torus grids")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qq", *g.shape))
        fh.write(struct.pack("<4d", *np.asarray(g.surface.periods, dtype=float).ravel()))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigError(f"{path} is not a field snapshot")
        n1, n2 = struct.unpack("<qq", fh.read(16))
        periods = np.array(struct.unpack("<4d", fh.read(32))).reshape(2, 2)
        vals = np.frombuffer(fh.read(), dtype="<f8")
    if vals.size != n1 * n2:
        raise ConfigError(f"{path}: expected {n1 * n2} values, found {vals.size}")
    grid = QuadratureGrid(FlatTorus(periods), (int(n1), int(n2)))
    return Field(grid, vals.reshape(n1, n2).copy())
