# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled torus Green-function lattice sums (same contract as _ewald_py)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, cos, sin, expm1, fabs, M_PI

cnp.import_array()

cdef double EULER_GAMMA = 0.57721566490153286061
cdef double INV4PI = 1.0 / (4.0 * M_PI)


cdef inline double _e1_cf(double u, double eu) nogil:
    # modified Lentz evaluation of the continued fraction for E1, u >= 1
    cdef double b = u + 1.0, c = 1.0 / 1e-300, d = 1.0 / b, h = d, an, de
    cdef int i
    for i in range(1, 200):
        an = -i * i
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        de = c * d
        h *= de
        if fabs(de - 1.0) < 1e-16:
            break
    return h * eu


cdef inline double _ein(double u) nogil:
    cdef double term, acc
    cdef int k
    if u < 1.0:
        term = u
        acc = u
        for k in range(2, 22):
            term = -term * u / k
            acc += term / k
        return acc
    return _e1_cf(u, exp(-u)) + log(u) + EULER_GAMMA


cdef inline double _ein_d1(double u) nogil:
    if u <= 0.0:
        return 1.0
    return -expm1(-u) / u


cdef inline double _ein_d2(double u) nogil:
    cdef double acc = 0.0, p = 1.0, fact = 1.0, sgn = -1.0
    cdef int k
    if u < 0.5:
        for k in range(1, 24):
            fact *= (k + 1)
            acc += sgn * k * p / fact
            p *= u
            sgn = -sgn
        return acc
    return (exp(-u) * (1.0 + u) - 1.0) / (u * u)


def regular_sum(y, double[:, ::1] real_vecs, double[:, ::1] recip_vecs,
                double[::1] recip_coef, double t0, double const, int order=0,
                recip_index=None, dual=None):
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t P = yv.shape[0], Nr = real_vecs.shape[0], Nq = recip_vecs.shape[0]
    val_arr = np.empty(P)
    grad_arr = np.zeros((P, 2))
    hess_arr = np.zeros((P, 3))
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double c = 1.0 / (4.0 * t0), c2 = 2.0 * c, sc = c2 * c2
    cdef Py_ssize_t p, n
    cdef double y0, y1, u, v, g0, g1, h0, h1, h2, d0, d1, e, ep, epp, ph, cs, sn, w, a1, a2
    # reciprocal phases exp(2 pi i q.y) with q = i b1 + j b2 are built from
    # powers of exp(2 pi i b1.y) and exp(2 pi i b2.y) instead of trig calls
    cdef int use_rec = recip_index is not None
    cdef int[:, ::1] ridx
    cdef double[:, ::1] bd
    cdef int imax = 0, jmax = 0, ii, jj
    cdef double ar, ai, br, bi, tr, ti
    if use_rec:
        ridx = np.ascontiguousarray(recip_index, dtype=np.intc)
        bd = np.ascontiguousarray(dual, dtype=np.float64)
        imax = int(np.max(np.abs(recip_index[:, 0])))
        jmax = int(np.max(np.abs(recip_index[:, 1])))
    pa_arr = np.empty((imax + 1, 2))
    pb_arr = np.empty((2 * jmax + 1, 2))
    cdef double[:, ::1] pa = pa_arr
    cdef double[:, ::1] pb = pb_arr
    with nogil:
        for p in range(P):
            y0 = yv[p, 0]
            y1 = yv[p, 1]
            u = c * (y0 * y0 + y1 * y1)
            v = INV4PI * _ein(u) + const
            g0 = 0.0
            g1 = 0.0
            h0 = 0.0
            h1 = 0.0
            h2 = 0.0
            if order >= 1:
                a1 = _ein_d1(u)
                g0 = INV4PI * a1 * c2 * y0
                g1 = INV4PI * a1 * c2 * y1
                if order >= 2:
                    a2 = _ein_d2(u)
                    h0 = INV4PI * (a2 * sc * y0 * y0 + a1 * c2)
                    h1 = INV4PI * (a2 * sc * y0 * y1)
                    h2 = INV4PI * (a2 * sc * y1 * y1 + a1 * c2)
            for n in range(Nr):
                d0 = y0 - real_vecs[n, 0]
                d1 = y1 - real_vecs[n, 1]
                u = c * (d0 * d0 + d1 * d1)
                if u > 50.0:
                    continue
                e = exp(-u)
                if u < 1.0:
                    v += INV4PI * (_ein(u) - log(u) - EULER_GAMMA)
                else:
                    v += INV4PI * _e1_cf(u, e)
                if order >= 1:
                    ep = -e / u
                    g0 += INV4PI * c2 * ep * d0
                    g1 += INV4PI * c2 * ep * d1
                    if order >= 2:
                        epp = e * (1.0 + u) / (u * u)
                        h0 += INV4PI * (epp * sc * d0 * d0 + ep * c2)
                        h1 += INV4PI * (epp * sc * d0 * d1)
                        h2 += INV4PI * (epp * sc * d1 * d1 + ep * c2)
            if use_rec:
                ph = 2.0 * M_PI * (y0 * bd[0, 0] + y1 * bd[0, 1])
                ar = cos(ph)
                ai = sin(ph)
                ph = 2.0 * M_PI * (y0 * bd[1, 0] + y1 * bd[1, 1])
                br = cos(ph)
                bi = sin(ph)
                pa[0, 0] = 1.0
                pa[0, 1] = 0.0
                for ii in range(1, imax + 1):
                    pa[ii, 0] = pa[ii - 1, 0] * ar - pa[ii - 1, 1] * ai
                    pa[ii, 1] = pa[ii - 1, 0] * ai + pa[ii - 1, 1] * ar
                pb[jmax, 0] = 1.0
                pb[jmax, 1] = 0.0
                for jj in range(1, jmax + 1):
                    pb[jmax + jj, 0] = pb[jmax + jj - 1, 0] * br - pb[jmax + jj - 1, 1] * bi
                    pb[jmax + jj, 1] = pb[jmax + jj - 1, 0] * bi + pb[jmax + jj - 1, 1] * br
                    pb[jmax - jj, 0] = pb[jmax + jj, 0]
                    pb[jmax - jj, 1] = -pb[jmax + jj, 1]
            for n in range(Nq):
                if use_rec:
                    ii = ridx[n, 0]
                    jj = ridx[n, 1] + jmax
                    cs = pa[ii, 0] * pb[jj, 0] - pa[ii, 1] * pb[jj, 1]
                    sn = pa[ii, 0] * pb[jj, 1] + pa[ii, 1] * pb[jj, 0]
                else:
                    ph = 2.0 * M_PI * (y0 * recip_vecs[n, 0] + y1 * recip_vecs[n, 1])
                    cs = cos(ph)
                    sn = sin(ph)
                v += recip_coef[n] * cs
                if order >= 1:
                    w = 2.0 * M_PI * recip_coef[n] * sn
                    g0 -= w * recip_vecs[n, 0]
                    g1 -= w * recip_vecs[n, 1]
                    if order >= 2:
                        w = 4.0 * M_PI * M_PI * recip_coef[n] * cs
                        h0 -= w * recip_vecs[n, 0] * recip_vecs[n, 0]
                        h1 -= w * recip_vecs[n, 0] * recip_vecs[n, 1]
                        h2 -= w * recip_vecs[n, 1] * recip_vecs[n, 1]
            val[p] = v
            grad[p, 0] = g0
            grad[p, 1] = g1
            hess[p, 0] = h0
            hess[p, 1] = h1
            hess[p, 2] = h2
    return (val_arr, grad_arr if order >= 1 else None, hess_arr if order >= 2 else None)
