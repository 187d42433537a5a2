"""Green function of -Laplacian with zero mean, its regular part and Robin function.

On a flat torus the smooth part ``R(y) = G(y) + log|y|/(2 pi)`` is an Ewald
split of the lattice sum: a Gaussian-screened real-space sum of exponential
integrals plus a rapidly decaying Fourier series. An independent evaluator
through the Jacobi theta function is kept for cross-checks.

On the unit sphere the closed form ``G(x, xi) = -(log(1 - x.xi) - log 2 + 1)/(4 pi)``
is used.
"""
from functools import lru_cache

import numpy as np

from .errors import SingularityError, UnsupportedSurfaceError
from .surface import Cutoff, chart_at

try:
    from . import _ewald as _kernel
    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - exercised when the extension is absent
    from . import _ewald_py as _kernel
    HAVE_COMPILED = False

from . import _ewald_py

INV2PI = 1.0 / (2.0 * np.pi)
EULER_GAMMA = 0.57721566490153286061
SINGULAR_RADIUS = 1e-12


class TorusGreen:
    """Green function evaluator on a flat torus.

    Parameters
    ----------
    torus : FlatTorus
    tail : float
        Exponent cutoff for both lattice sums; neglected terms are below
        ``exp(-tail)``.
    backend : module, optional
        Kernel implementation; defaults to the compiled one when available.
    """

    method = "TorusSeries"

    def __init__(self, torus, tail=40.0, split=0.15, backend=None):
        self.surface = torus
        self.backend = backend or _kernel
        area = torus.area
        # screening time; smaller values move work into the cheap reciprocal sum
        t0 = split * area / (4.0 * np.pi)
        self.t0 = t0
        P, B = torus.periods, torus.dual
        ymax = 0.5 * (np.linalg.norm(P[0]) + np.linalg.norm(P[1]))
        rcut = np.sqrt(4 * t0 * tail) + ymax
        span = int(np.ceil(rcut / (area / max(np.linalg.norm(P[0]), np.linalg.norm(P[1]))))) + 2
        idx = np.arange(-span, span + 1)
        I, J = np.meshgrid(idx, idx, indexing="ij")
        I, J = I.ravel(), J.ravel()
        vecs = I[:, None] * P[0] + J[:, None] * P[1]
        nrm = np.linalg.norm(vecs, axis=1)
        keep = (nrm > 0) & (nrm <= rcut)
        self.real_vecs = np.ascontiguousarray(vecs[keep])
        qcut = np.sqrt(tail / (4 * np.pi**2 * t0))
        qspan = int(np.ceil(qcut * max(np.linalg.norm(P[0]), np.linalg.norm(P[1])))) + 2
        qi = np.arange(-qspan, qspan + 1)
        I, J = np.meshgrid(qi, qi, indexing="ij")
        I, J = I.ravel(), J.ravel()
        half = (I > 0) | ((I == 0) & (J > 0))
        q = I[half, None] * B[0] + J[half, None] * B[1]
        q2 = np.einsum("ij,ij->i", q, q)
        keep = 4 * np.pi**2 * q2 * t0 <= tail
        q, q2 = q[keep], q2[keep]
        # make the first index non-negative for the power recurrence
        ij = np.stack([I[half][keep], J[half][keep]], axis=1)
        self.recip_index = np.ascontiguousarray(ij, dtype=np.intc)
        self.recip_vecs = np.ascontiguousarray(q)
        self.recip_coef = np.ascontiguousarray(
            2.0 * np.exp(-4 * np.pi**2 * q2 * t0) / (4 * np.pi**2 * q2 * area))
        self.const = (np.log(4 * t0) - EULER_GAMMA) / (4 * np.pi) - t0 / area

    # -- smooth part -----------------------------------------------------
    def smooth(self, y, order=0):
        """R(y) = G(y) + log|y|/(2 pi) at minimum-image displacements y.

        Returns ``(value, gradient, hessian)`` with entries ``None`` above
        ``order``; Hessians are packed as (xx, xy, yy).
        """
        y = np.asarray(y, dtype=float)
        shp = y.shape[:-1]
        v, g, h = self.backend.regular_sum(
            np.ascontiguousarray(y.reshape(-1, 2)), self.real_vecs, self.recip_vecs,
            self.recip_coef, self.t0, self.const, order, self.recip_index, self.surface.dual)
        v = v.reshape(shp)
        g = None if g is None else g.reshape(shp + (2,))
        h = None if h is None else h.reshape(shp + (3,))
        return v, g, h

    def displacement(self, x, xi):
        return self.surface.wrap(np.asarray(x, dtype=float) - np.asarray(xi, dtype=float))

    def green(self, x, xi):
        y = self.displacement(x, xi)
        r = np.linalg.norm(y, axis=-1)
        if np.any(r < SINGULAR_RADIUS):
            raise SingularityError("Green function evaluated at its pole")
        R, _, _ = self.smooth(y)
        return R - INV2PI * np.log(r)

    def green_grad(self, x, xi):
        """Gradient with respect to the first argument."""
        y = self.displacement(x, xi)
        r2 = np.einsum("...i,...i->...", y, y)
        if np.any(r2 < SINGULAR_RADIUS**2):
            raise SingularityError("Green gradient evaluated at its pole")
        _, g, _ = self.smooth(y, 1)
        return g - INV2PI * y / r2[..., None]

    def green_hess(self, x, xi):
        y = self.displacement(x, xi)
        r2 = np.einsum("...i,...i->...", y, y)
        if np.any(r2 < SINGULAR_RADIUS**2):
            raise SingularityError("Green Hessian evaluated at its pole")
        _, _, h = self.smooth(y, 2)
        # Hessian of log|y| is (|y|^2 I - 2 y y^T)/|y|^4
        out = h.copy()
        r4 = r2 * r2
        out[..., 0] -= INV2PI * (r2 - 2 * y[..., 0] ** 2) / r4
        out[..., 1] -= INV2PI * (-2 * y[..., 0] * y[..., 1]) / r4
        out[..., 2] -= INV2PI * (r2 - 2 * y[..., 1] ** 2) / r4
        return out

    def regular_part(self, x, xi, cutoff=None):
        """H(x, xi) = G(x, xi) + chi(|y|) log|y| / (2 pi)."""
        cutoff = cutoff or default_cutoff(self.surface)
        y = self.displacement(x, xi)
        r = np.linalg.norm(y, axis=-1)
        R, _, _ = self.smooth(y)
        one_minus = 1.0 - cutoff(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(one_minus > 0, one_minus * np.log(np.where(r > 0, r, 1.0)), 0.0)
        return R - INV2PI * corr

    def robin(self, xi=None):
        """H(xi, xi); constant on a flat torus."""
        v, _, _ = self.smooth(np.zeros((1, 2)))
        if xi is None:
            return float(v[0])
        return np.full(np.shape(xi)[:-1], float(v[0]))


class SphereGreen:
    """Closed-form Green function on the unit sphere."""

    method = "SphereClosedForm"

    def __init__(self, sphere):
        self.surface = sphere
        # zero-mean constant of G in the chart form
        # -log|y|/(2 pi) + log(4 + |y|^2)/(4 pi) + c0
        self.c0 = -1.0 / (4.0 * np.pi)

    @staticmethod
    def _chord2(x, xi):
        d = np.asarray(x, dtype=float) - np.asarray(xi, dtype=float)
        return np.einsum("...i,...i->...", d, d)

    def green(self, x, xi):
        c2 = self._chord2(x, xi)
        if np.any(c2 < SINGULAR_RADIUS**2):
            raise SingularityError("Green function evaluated at its pole")
        return -(np.log(c2) - 2 * np.log(2.0) + 1.0) / (4 * np.pi)

    def green_grad(self, x, xi):
        """Gradient in the isothermal chart centred at each x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = np.broadcast_to(np.asarray(xi, dtype=float), x.shape)
        c2 = self._chord2(x, xi)
        if np.any(c2 < SINGULAR_RADIUS**2):
            raise SingularityError("Green gradient evaluated at its pole")
        amb = xi / (4 * np.pi * (c2 / 2.0))[..., None]
        out = np.empty(x.shape[:-1] + (2,))
        flat_x = x.reshape(-1, 3)
        flat_a = amb.reshape(-1, 3)
        res = out.reshape(-1, 2)
        for i in range(len(flat_x)):
            frame = chart_at(self.surface, flat_x[i], self.surface.max_chart_radius).tangent_frame()
            res[i] = frame @ flat_a[i]
        return out

    def regular_part(self, x, xi, cutoff=None):
        cutoff = cutoff or default_cutoff(self.surface)
        x = np.asarray(x, dtype=float)
        ch = chart_at(self.surface, xi, min(cutoff.r0, self.surface.max_chart_radius))
        y = ch.to_local(x)
        r2 = np.einsum("...i,...i->...", y, y)
        r = np.sqrt(r2)
        chi = cutoff(r)
        # inside the chart G = -log|y|/(2 pi) + log(4+|y|^2)/(4 pi) + c0
        inner = np.log(4.0 + r2) / (4 * np.pi) + self.c0
        with np.errstate(divide="ignore", invalid="ignore"):
            logr = np.log(np.where(r > 0, r, 1.0))
        return inner + INV2PI * (chi - 1.0) * np.where(chi < 1.0, logr, 0.0)

    def robin(self, xi=None):
        v = np.log(4.0) / (4 * np.pi) + self.c0
        if xi is None:
            return float(v)
        return np.full(np.shape(xi)[:-1], float(v))


def default_cutoff(surface, profile="smooth"):
    return Cutoff(surface.max_chart_radius, profile)


@lru_cache(maxsize=32)
def evaluator(surface, backend_name=None):
    """Cached Green evaluator for a surface."""
    if surface.kind == "torus":
        backend = _ewald_py if backend_name == "python" else None
        return TorusGreen(surface, backend=backend)
    if surface.kind == "sphere":
        return SphereGreen(surface)
    raise UnsupportedSurfaceError(f"no Green function for {surface!r}")


def green(surface, x, xi):
    return evaluator(surface).green(x, xi)


def green_grad(surface, x, xi):
    return evaluator(surface).green_grad(x, xi)


def regular_part(surface, x, xi, cutoff=None):
    return evaluator(surface).regular_part(x, xi, cutoff)


def robin(surface, xi=None):
    return evaluator(surface).robin(xi)


# -- independent torus evaluator through theta functions --------------------

def _reduced_tau(torus):
    w1 = complex(*torus.periods[0])
    w2 = complex(*torus.periods[1])
    tau = w2 / w1
    if tau.imag < 0:
        w2, tau = -w2, -tau
    return w1, w2, tau


def theta_green(torus, x, xi, nterms=None):
    """Torus Green function from log|theta_1|, with its zero-mean constant.

    Uses G(z) = -log|theta_1(pi w | tau)|/(2 pi) + (Im w)^2/(2 Im tau) + C with
    w = z/w1; the constant follows from averaging log|theta_1| over a period
    cell, where all product factors except the sine average to zero.
    """
    w1, _, tau = _reduced_tau(torus)
    q = np.exp(1j * np.pi * tau)
    if nterms is None:
        nterms = int(np.ceil(40.0 / (2 * np.pi * tau.imag))) + 2
    d = np.asarray(x, dtype=float) - np.asarray(xi, dtype=float)
    w = (d[..., 0] + 1j * d[..., 1]) / w1
    # reduce w = s + t tau to the centred cell
    t = np.rint(w.imag / tau.imag)
    w = w - t * tau
    w = w - np.rint(w.real)
    logabs = np.log(2.0) - np.pi * tau.imag / 4 + np.log(np.abs(np.sin(np.pi * w)))
    e = np.exp(2j * np.pi * w)
    const = 0.0
    for n in range(1, nterms + 1):
        q2n = q ** (2 * n)
        const += np.log(abs(1 - q2n))
        logabs = logabs + np.log(np.abs(1 - q2n * e)) + np.log(np.abs(1 - q2n / e))
    logabs = logabs + const
    C = (np.pi * tau.imag / 4 + const) / (2 * np.pi) - tau.imag / 6
    return -logabs / (2 * np.pi) + w.imag**2 / (2 * tau.imag) + C
