"""Differentiable scalar fields: analytic primitives and B-spline grids.

Every field answers value queries with derivatives up to the Hessian, for
a single point (shape ``(3,)``) or a batch (shape ``(n, 3)``). All arithmetic is float64;
grids store float32 samples and promote on read.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import kernels
from ._parallel import map_chunks
from .errors import InvalidArgumentError, OutOfDomainError

DEFAULT_BBOX = ((-1.05, -1.05, -1.05), (1.05, 1.05, 1.05))

_EYE = np.eye(3)
_POLE = np.array([0.0, 0.0, 1.0])


def as_points(p):
    """Return ``(P, single)`` with ``P`` a float64 ``(n, 3)`` array."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape != (3,):
            raise InvalidArgumentError(f"expected a 3-point, got shape {arr.shape}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidArgumentError(f"expected (n, 3) points, got shape {arr.shape}")
    return arr, False


class ScalarField:
    """Base class for fields mapping 3D points to signed distances.

    Subclasses implement ``derivatives(P, order)`` on ``(n, 3)`` arrays and
    inherit the single-point/batch front ends.
    """

    def derivatives(self, P, order=2):
        """Return ``(value, grad, hess)`` for a batch; entries above ``order`` are None."""
        raise NotImplementedError

    def eval(self, p):
        P, single = as_points(p)
        v = self.derivatives(P, 0)[0]
        return float(v[0]) if single else v

    def gradient(self, p):
        P, single = as_points(p)
        g = self.derivatives(P, 1)[1]
        return g[0] if single else g

    def hessian(self, p):
        P, single = as_points(p)
        h = self.derivatives(P, 2)[2]
        return h[0] if single else h

    __call__ = eval


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


@dataclass(frozen=True)
class Sphere(ScalarField):
    """Exact sphere distance. At the center the gradient is +z and the Hessian zero."""

    radius: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)

    def derivatives(self, P, order=2):
        d = P - np.asarray(self.center, dtype=np.float64)
        length = np.linalg.norm(d, axis=1)
        value = length - self.radius
        if order < 1:
            return value, None, None
        medial = length == 0.0
        safe = np.where(medial, 1.0, length)
        n = d / safe[:, None]
        n[medial] = _POLE
        if order < 2:
            return value, n, None
        hess = (_EYE - _outer(n, n)) / safe[:, None, None]
        hess[medial] = 0.0
        return value, n, hess


@dataclass(frozen=True)
class Torus(ScalarField):
    """Exact distance to a torus around the z-axis through ``center``.

    Limits: on the z-axis the radial direction is taken as +x; on the core
    circle the meridian normal is taken as radially outward.
    """

    major: float = 0.5
    minor: float = 0.2
    center: tuple = (0.0, 0.0, 0.0)

    def derivatives(self, P, order=2):
        d = P - np.asarray(self.center, dtype=np.float64)
        rho = np.hypot(d[:, 0], d[:, 1])
        a = rho - self.major
        b = d[:, 2]
        dist = np.hypot(a, b)
        value = dist - self.minor
        if order < 1:
            return value, None, None
        on_axis = rho == 0.0
        rho_s = np.where(on_axis, 1.0, rho)
        e_rho = np.zeros_like(d)
        e_rho[:, 0] = np.where(on_axis, 1.0, d[:, 0] / rho_s)
        e_rho[:, 1] = np.where(on_axis, 0.0, d[:, 1] / rho_s)
        core = dist == 0.0
        dist_s = np.where(core, 1.0, dist)
        na = np.where(core, 1.0, a / dist_s)
        nb = np.where(core, 0.0, b / dist_s)
        grad = na[:, None] * e_rho
        grad[:, 2] += nb
        if order < 2:
            return value, grad, None
        e_phi = np.stack([-e_rho[:, 1], e_rho[:, 0], np.zeros(len(d))], axis=1)
        # unit tangent of the meridian circle
        t = nb[:, None] * e_rho
        t[:, 2] -= na
        hess = _outer(t, t) / dist_s[:, None, None]
        hess += (na / rho_s)[:, None, None] * _outer(e_phi, e_phi)
        hess[core] = 0.0
        return value, grad, hess


@dataclass(frozen=True)
class SmoothUnion(ScalarField):
    """Log-sum-exp smooth minimum of child fields with blend radius ``k``.

    C-infinity wherever the children are; equals ``min`` up to
    ``k * log(m)`` and converges to it away from the blend region.
    """

    children: tuple = ()
    k: float = 0.05

    def __post_init__(self):
        if len(self.children) < 1:
            raise InvalidArgumentError("smooth union needs at least one child")
        if self.k <= 0:
            raise InvalidArgumentError("blend radius must be positive")
        object.__setattr__(self, "children", tuple(self.children))

    def derivatives(self, P, order=2):
        parts = [c.derivatives(P, order) for c in self.children]
        vals = np.stack([p[0] for p in parts])          # (m, n)
        lo = vals.min(axis=0)
        ex = np.exp(-(vals - lo) / self.k)
        total = ex.sum(axis=0)
        value = lo - self.k * np.log(total)
        if order < 1:
            return value, None, None
        w = ex / total                                   # (m, n)
        grads = np.stack([p[1] for p in parts])          # (m, n, 3)
        gbar = np.einsum("mn,mni->ni", w, grads)
        if order < 2:
            return value, gbar, None
        hess = np.einsum("mn,mnij->nij", w, np.stack([p[2] for p in parts]))
        second = np.einsum("mn,mni,mnj->nij", w, grads, grads)
        hess -= (second - _outer(gbar, gbar)) / self.k
        return value, gbar, hess


def blob():
    """Asymmetric three-lobe smooth union used as the default irregular shape."""
    return SmoothUnion(
        children=(
            Sphere(0.42, (0.08, 0.04, 0.0)),
            Sphere(0.30, (-0.30, 0.12, 0.16)),
            Sphere(0.27, (0.06, -0.30, -0.20)),
        ),
        k=0.05,
    )


@dataclass(frozen=True, eq=False)
class GridField(ScalarField):
    """Cubic B-spline interpolant of samples on a regular lattice.

    ``values`` has shape ``(nx, ny, nz)`` indexed ``[i, j, k]`` along x, y, z
    and is stored as float32. The spline interpolates the samples (mirror
    boundary) and is C2 inside ``bbox``; queries outside raise
    :class:`OutOfDomainError`.
    """

    values: np.ndarray
    bbox: tuple = DEFAULT_BBOX
    _coef: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float32)
        if vals.ndim != 3 or min(vals.shape) < 4:
            raise InvalidArgumentError(f"grid needs >= 4 samples per axis, got {vals.shape}")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bbox)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise InvalidArgumentError(f"degenerate bbox {self.bbox}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bbox", (tuple(lo.tolist()), tuple(hi.tolist())))
        coef = ndimage.spline_filter(vals.astype(np.float64), order=3, mode="mirror")
        coef = np.ascontiguousarray(np.pad(coef, 2, mode="reflect"))
        coef.setflags(write=False)
        object.__setattr__(self, "_coef", coef)

    @property
    def dims(self):
        return self.values.shape

    @property
    def lower(self):
        return np.asarray(self.bbox[0])

    @property
    def upper(self):
        return np.asarray(self.bbox[1])

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.asarray(self.dims) - 1)

    def node_coords(self, axis):
        return np.linspace(self.bbox[0][axis], self.bbox[1][axis], self.dims[axis])

    def contains(self, P):
        tol = 1e-9 * (self.upper - self.lower)
        return np.all((P >= self.lower - tol) & (P <= self.upper + tol), axis=1)

    def to_index(self, P):
        """Fractional lattice index of world points (0 at ``bbox`` min)."""
        return (P - self.lower) / self.spacing

    def derivatives(self, P, order=2):
        inside = self.contains(P)
        if not np.all(inside):
            bad = P[~inside][0]
            raise OutOfDomainError(f"point {bad.tolist()} outside grid bbox {self.bbox}")
        t = np.ascontiguousarray(self.to_index(P) + 2.0)
        value, grad, hess = kernels.bspline_eval(self._coef, t, order)
        h = self.spacing
        if grad is not None:
            grad = grad / h
        if hess is not None:
            hess = hess / (h[:, None] * h[None, :])
        return value, grad, hess


def lattice_points(dims, bbox):
    """World coordinates of an ``(nx, ny, nz)`` lattice.

    Rows follow C order of an ``(nx, ny, nz)`` array (``k`` fastest), so
    ``values.reshape(dims)`` restores the ``[i, j, k]`` layout.
    """
    axes = [np.linspace(bbox[0][a], bbox[1][a], dims[a]) for a in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def _check_bake_args(dims, bbox):
    dims = tuple(int(d) for d in np.broadcast_to(np.asarray(dims), (3,)))
    if min(dims) < 8:
        raise InvalidArgumentError(f"bake dims must be >= 8 per axis, got {dims}")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bbox)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise InvalidArgumentError(f"degenerate bbox {bbox}")
    return dims, (tuple(lo.tolist()), tuple(hi.tolist()))


def _check_margin(values):
    shell = np.ones(values.shape, dtype=bool)
    shell[2:-2, 2:-2, 2:-2] = False
    if np.any(values[shell] <= 0):
        raise InvalidArgumentError(
            "zero set reaches within 2 cells of the bbox; enlarge the bbox")


def bake_grid(field: ScalarField, dims=128, bbox=DEFAULT_BBOX, *, check_margin=True):
    """Sample ``field`` on a lattice and return the B-spline :class:`GridField`.

    ``dims`` is an int or an ``(nx, ny, nz)`` triple. Output is deterministic
    and independent of the thread count.
    """
    dims, bbox = _check_bake_args(dims, bbox)
    P = lattice_points(dims, bbox)
    vals = map_chunks(lambda chunk: field.derivatives(chunk, 0)[0], P)
    vals = vals.reshape(dims)
    if check_margin:
        _check_margin(vals)
    return GridField(vals, bbox)


# single-point conveniences mirroring the operation names


def eval_field(field: ScalarField, p):
    return field.eval(p)


def eval_gradient(field: ScalarField, p):
    return field.gradient(p)


def eval_hessian(field: ScalarField, p):
    return field.hessian(p)
