"""Pure numpy implementations of the compiled kernels in ``_core.pyx``.

Used when the extension is not built or when ``FUNCMARK_PURE_PYTHON`` is
set. Results agree with the compiled path to rounding.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 32768


def _basis(u):
    u2 = u * u
    u3 = u2 * u
    om = 1.0 - u
    w = np.stack([om ** 3 / 6.0,
                  (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
                  (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
                  u3 / 6.0], axis=-1)
    d = np.stack([-0.5 * om * om,
                  1.5 * u2 - 2.0 * u,
                  -1.5 * u2 + u + 0.5,
                  0.5 * u2], axis=-1)
    s = np.stack([om, 3.0 * u - 2.0, 1.0 - 3.0 * u, u], axis=-1)
    return w, d, s


def _eval_chunk(coef, t, order):
    shape = np.array(coef.shape)
    cell = np.clip(np.floor(t).astype(np.int64), 1, shape - 3)
    u = t - cell
    wx, dx, sx = _basis(u[:, 0])
    wy, dy, sy = _basis(u[:, 1])
    wz, dz, sz = _basis(u[:, 2])
    off = np.arange(-1, 3)
    ix = (cell[:, 0:1] + off)[:, :, None, None]
    iy = (cell[:, 1:2] + off)[:, None, :, None]
    iz = (cell[:, 2:3] + off)[:, None, None, :]
    taps = coef[ix, iy, iz]

    def contract(a, b, c):
        return np.einsum("na,nb,nc,nabc->n", a, b, c, taps, optimize=True)

    val = contract(wx, wy, wz)
    grad = hess = None
    if order >= 1:
        grad = np.stack([contract(dx, wy, wz),
                         contract(wx, dy, wz),
                         contract(wx, wy, dz)], axis=-1)
    if order >= 2:
        hxx = contract(sx, wy, wz)
        hyy = contract(wx, sy, wz)
        hzz = contract(wx, wy, sz)
        hxy = contract(dx, dy, wz)
        hxz = contract(dx, wy, dz)
        hyz = contract(wx, dy, dz)
        hess = np.stack([np.stack([hxx, hxy, hxz], -1),
                         np.stack([hxy, hyy, hyz], -1),
                         np.stack([hxz, hyz, hzz], -1)], axis=-2)
    return val, grad, hess


def bspline_eval(coef, t, order):
    """Evaluate a tensor cubic B-spline at index-space points.

    Same contract as the compiled kernel: ``coef`` is the padded coefficient
    volume, ``t`` holds ``(n, 3)`` fractional indices, derivatives are in
    index units.
    """
    coef = np.asarray(coef, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 3)
    n = len(t)
    val = np.empty(n)
    grad = np.empty((n, 3)) if order >= 1 else None
    hess = np.empty((n, 3, 3)) if order >= 2 else None
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        v, g, h = _eval_chunk(coef, t[lo:hi], order)
        val[lo:hi] = v
        if grad is not None:
            grad[lo:hi] = g
        if hess is not None:
            hess[lo:hi] = h
    return val, grad, hess


def _dot(u, v):
    return np.einsum("ij,ij->i", u, v)


def closest_point_triangle(p, a, b, c):
    """Closest point on triangle ``(a[i], b[i], c[i])`` to ``p[i]``.

    Voronoi-region classification after Ericson, *Real-Time Collision
    Detection* 5.1.5, evaluated for all rows at once. Returns ``(q, d2)``.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64).reshape(-1, 3) for x in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    q = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        q[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        e1, e2 = d4 - d3, d5 - d6
        w = e1 / (e1 + e2)
        assign((va <= 0) & (e1 >= 0) & (e2 >= 0), b + w[:, None] * (c - b))
        total = va + vb + vc
        assign(total <= 0, a)
        inv = 1.0 / total
        assign(np.ones(len(p), dtype=bool),
               a + ab * (vb * inv)[:, None] + ac * (vc * inv)[:, None])
    diff = p - q
    return q, _dot(diff, diff)
