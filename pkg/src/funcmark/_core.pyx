# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: cubic B-spline evaluation and point-triangle queries.

Signatures mirror :mod:`funcmark._core_py`; :mod:`funcmark.kernels` picks
one at import time.
"""

import numpy as np

from libc.math cimport floor


cdef inline void _basis(double u, double* w, double* d, double* s) noexcept nogil:
    cdef double u2 = u * u
    cdef double u3 = u2 * u
    cdef double om = 1.0 - u
    w[0] = om * om * om / 6.0
    w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0
    w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0
    w[3] = u3 / 6.0
    d[0] = -0.5 * om * om
    d[1] = 1.5 * u2 - 2.0 * u
    d[2] = -1.5 * u2 + u + 0.5
    d[3] = 0.5 * u2
    s[0] = om
    s[1] = 3.0 * u - 2.0
    s[2] = 1.0 - 3.0 * u
    s[3] = u


cdef inline Py_ssize_t _cell(double t, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i = <Py_ssize_t>floor(t)
    if i < 1:
        i = 1
    if i > n - 3:
        i = n - 3
    return i


def bspline_eval(const double[:, :, ::1] coef, const double[:, ::1] t, int order):
    """Evaluate a tensor cubic B-spline at index-space points.

    ``coef`` is the padded coefficient volume, ``t`` an ``(n, 3)`` array of
    fractional indices into it. Returns ``(value, grad, hess)``; derivatives
    are in index units and ``None`` above ``order``.
    """
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t nx = coef.shape[0], ny = coef.shape[1], nz = coef.shape[2]
    val_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.empty((n, 3), dtype=np.float64) if order >= 1 else np.empty((0, 3))
    hess_arr = np.empty((n, 3, 3), dtype=np.float64) if order >= 2 else np.empty((0, 3, 3))
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, :, ::1] hess = hess_arr
    cdef double wx[4]
    cdef double dx[4]
    cdef double sx[4]
    cdef double wy[4]
    cdef double dy[4]
    cdef double sy[4]
    cdef double wz[4]
    cdef double dz[4]
    cdef double sz[4]
    cdef Py_ssize_t p, a, b, c, ix, iy, iz
    cdef double cv, v, gx, gy, gz, hxx, hyy, hzz, hxy, hxz, hyz
    cdef double wyz, dyz, wdz, syz, wsz, ddz
    with nogil:
        for p in range(n):
            ix = _cell(t[p, 0], nx)
            iy = _cell(t[p, 1], ny)
            iz = _cell(t[p, 2], nz)
            _basis(t[p, 0] - ix, wx, dx, sx)
            _basis(t[p, 1] - iy, wy, dy, sy)
            _basis(t[p, 2] - iz, wz, dz, sz)
            v = 0.0
            gx = 0.0
            gy = 0.0
            gz = 0.0
            hxx = 0.0
            hyy = 0.0
            hzz = 0.0
            hxy = 0.0
            hxz = 0.0
            hyz = 0.0
            for b in range(4):
                for c in range(4):
                    wyz = wy[b] * wz[c]
                    dyz = dy[b] * wz[c]
                    wdz = wy[b] * dz[c]
                    syz = sy[b] * wz[c]
                    wsz = wy[b] * sz[c]
                    ddz = dy[b] * dz[c]
                    for a in range(4):
                        cv = coef[ix - 1 + a, iy - 1 + b, iz - 1 + c]
                        v += wx[a] * wyz * cv
                        if order >= 1:
                            gx += dx[a] * wyz * cv
                            gy += wx[a] * dyz * cv
                            gz += wx[a] * wdz * cv
                        if order >= 2:
                            hxx += sx[a] * wyz * cv
                            hyy += wx[a] * syz * cv
                            hzz += wx[a] * wsz * cv
                            hxy += dx[a] * dyz * cv
                            hxz += dx[a] * wdz * cv
                            hyz += wx[a] * ddz * cv
            val[p] = v
            if order >= 1:
                grad[p, 0] = gx
                grad[p, 1] = gy
                grad[p, 2] = gz
            if order >= 2:
                hess[p, 0, 0] = hxx
                hess[p, 1, 1] = hyy
                hess[p, 2, 2] = hzz
                hess[p, 0, 1] = hxy
                hess[p, 1, 0] = hxy
                hess[p, 0, 2] = hxz
                hess[p, 2, 0] = hxz
                hess[p, 1, 2] = hyz
                hess[p, 2, 1] = hyz
    return (val_arr,
            grad_arr if order >= 1 else None,
            hess_arr if order >= 2 else None)


cdef inline double _dot(double* u, double* v) noexcept nogil:
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def closest_point_triangle(const double[:, ::1] p, const double[:, ::1] a,
                           const double[:, ::1] b, const double[:, ::1] c):
    """Closest point on triangle ``(a[i], b[i], c[i])`` to ``p[i]``.

    Returns ``(q, d2)``: the closest points and squared distances.
    """
    cdef Py_ssize_t n = p.shape[0]
    q_arr = np.empty((n, 3), dtype=np.float64)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] q = q_arr
    cdef double[::1] d2 = d2_arr
    cdef double ab[3]
    cdef double ac[3]
    cdef double ap[3]
    cdef double bp[3]
    cdef double cp[3]
    cdef double r[3]
    cdef double d1, d2_, d3, d4, d5, d6, va, vb, vc, v, w, denom, e
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(n):
            for k in range(3):
                ab[k] = b[i, k] - a[i, k]
                ac[k] = c[i, k] - a[i, k]
                ap[k] = p[i, k] - a[i, k]
            d1 = _dot(ab, ap)
            d2_ = _dot(ac, ap)
            if d1 <= 0.0 and d2_ <= 0.0:
                for k in range(3):
                    r[k] = a[i, k]
            else:
                for k in range(3):
                    bp[k] = p[i, k] - b[i, k]
                d3 = _dot(ab, bp)
                d4 = _dot(ac, bp)
                if d3 >= 0.0 and d4 <= d3:
                    for k in range(3):
                        r[k] = b[i, k]
                else:
                    vc = d1 * d4 - d3 * d2_
                    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                        v = d1 / (d1 - d3)
                        for k in range(3):
                            r[k] = a[i, k] + v * ab[k]
                    else:
                        for k in range(3):
                            cp[k] = p[i, k] - c[i, k]
                        d5 = _dot(ab, cp)
                        d6 = _dot(ac, cp)
                        if d6 >= 0.0 and d5 <= d6:
                            for k in range(3):
                                r[k] = c[i, k]
                        else:
                            vb = d5 * d2_ - d1 * d6
                            if vb <= 0.0 and d2_ >= 0.0 and d6 <= 0.0:
                                w = d2_ / (d2_ - d6)
                                for k in range(3):
                                    r[k] = a[i, k] + w * ac[k]
                            else:
                                va = d3 * d6 - d5 * d4
                                if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                                    w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                                    for k in range(3):
                                        r[k] = b[i, k] + w * (c[i, k] - b[i, k])
                                elif va + vb + vc <= 0.0:
                                    # zero-area triangle; only reachable on exact ties
                                    for k in range(3):
                                        r[k] = a[i, k]
                                else:
                                    denom = 1.0 / (va + vb + vc)
                                    v = vb * denom
                                    w = vc * denom
                                    for k in range(3):
                                        r[k] = a[i, k] + ab[k] * v + ac[k] * w
            e = 0.0
            for k in range(3):
                q[i, k] = r[k]
                e += (p[i, k] - r[k]) * (p[i, k] - r[k])
            d2[i] = e
    return q_arr, d2_arr
