"""Numpy implementation of the torus Green-function lattice sums.

Both this module and the compiled ``_ewald`` extension expose
``regular_sum(y, real_vecs, recip_vecs, recip_coef, t0, const, order)``.
For minimum-image displacements ``y`` it returns the smooth part
``R(y) = G(y) + log|y| / (2 pi)`` and, depending on ``order``, its gradient
and Hessian (packed as xx, xy, yy).
"""
import numpy as np
from scipy.special import exp1

EULER_GAMMA = 0.57721566490153286061
INV4PI = 1.0 / (4.0 * np.pi)


def ein(u):
    """Entire exponential integral Ein(u) = E1(u) + log u + gamma."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 1.0
    us = u[small]
    term = us.copy()
    acc = us.copy()
    for k in range(2, 22):
        term = -term * us / k
        acc = acc + term / k
    out[small] = acc
    ul = u[~small]
    out[~small] = exp1(ul) + np.log(ul) + EULER_GAMMA
    return out


def ein_d1(u):
    """(1 - exp(-u)) / u."""
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u)
    nz = u > 0
    out[nz] = -np.expm1(-u[nz]) / u[nz]
    return out


def ein_d2(u):
    """Derivative of (1 - exp(-u)) / u."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 0.5
    us = u[small]
    # sum_{k>=1} (-1)^k k u^{k-1} / (k+1)!
    acc = np.zeros_like(us)
    p = np.ones_like(us)
    fact = 1.0
    for k in range(1, 24):
        fact *= (k + 1)
        acc += (-1) ** k * k * p / fact
        p = p * us
    out[small] = acc
    ul = u[~small]
    out[~small] = (np.exp(-ul) * (1.0 + ul) - 1.0) / ul**2
    return out


def regular_sum(y, real_vecs, recip_vecs, recip_coef, t0, const, order=0,
                recip_index=None, dual=None, chunk=4096):
    y = np.ascontiguousarray(y, dtype=float).reshape(-1, 2)
    P = len(y)
    val = np.empty(P)
    grad = np.empty((P, 2)) if order >= 1 else None
    hess = np.empty((P, 3)) if order >= 2 else None
    c = 1.0 / (4.0 * t0)
    for a in range(0, P, chunk):
        yy = y[a:a + chunk]
        u0 = c * np.einsum("pi,pi->p", yy, yy)
        v = INV4PI * ein(u0) + const
        d = yy[:, None, :] - real_vecs[None, :, :]
        un = c * np.einsum("pni,pni->pn", d, d)
        v += INV4PI * exp1(un).sum(axis=1)
        ph = 2.0 * np.pi * yy @ recip_vecs.T
        cs = np.cos(ph)
        v += cs @ recip_coef
        val[a:a + chunk] = v
        if order >= 1:
            g1 = ein_d1(u0)
            e = np.exp(-un)
            e1p = -e / un
            g = INV4PI * (g1 * 2 * c)[:, None] * yy
            g += INV4PI * 2 * c * np.einsum("pn,pni->pi", e1p, d)
            sn = np.sin(ph)
            g -= 2.0 * np.pi * (sn * recip_coef) @ recip_vecs
            grad[a:a + chunk] = g
        if order >= 2:
            g2 = ein_d2(u0)
            e1pp = e * (1.0 + un) / un**2
            h = np.zeros((len(yy), 3))
            sc = (2 * c) ** 2
            h[:, 0] = INV4PI * (g2 * sc * yy[:, 0] ** 2 + g1 * 2 * c)
            h[:, 1] = INV4PI * (g2 * sc * yy[:, 0] * yy[:, 1])
            h[:, 2] = INV4PI * (g2 * sc * yy[:, 1] ** 2 + g1 * 2 * c)
            h[:, 0] += INV4PI * np.sum(e1pp * sc * d[..., 0] ** 2 + e1p * 2 * c, axis=1)
            h[:, 1] += INV4PI * np.sum(e1pp * sc * d[..., 0] * d[..., 1], axis=1)
            h[:, 2] += INV4PI * np.sum(e1pp * sc * d[..., 1] ** 2 + e1p * 2 * c, axis=1)
            w = cs * recip_coef * 4.0 * np.pi**2
            h[:, 0] -= w @ (recip_vecs[:, 0] ** 2)
            h[:, 1] -= w @ (recip_vecs[:, 0] * recip_vecs[:, 1])
            h[:, 2] -= w @ (recip_vecs[:, 1] ** 2)
            hess[a:a + chunk] = h
    return val, grad, hess
