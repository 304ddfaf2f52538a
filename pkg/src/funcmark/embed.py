"""Message-guided deformation of a field and its Newton inverse.

A point ``y`` in a partition carrying bit ``b`` moves along the field
normal by the window value: ``D(y) = y + s * C(y) * grad F(y)`` with
``s = +1`` for ``b = 1`` and ``s = -1`` for ``b = 0``. The watermarked field
is ``G(x) = F(D^-1(x))``.

Jacobians here are in the usual row-per-output layout,
``J[i, j] = dD_i / dy_j = delta_ij + s * (C * H_ij + grad F_i * dC/dy_j)``;
it is the transpose of the column-per-output matrix
``I + C H + grad C grad F^T``. Hence ``grad G(x) = J(y)^-T grad F(y)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._parallel import map_chunks
from .errors import (
    InvalidArgumentError,
    NonConvergenceError,
    SingularJacobianError,
    UndefinedDirectionError,
)
from .field import (
    DEFAULT_BBOX,
    GridField,
    ScalarField,
    _check_bake_args,
    _check_margin,
    as_points,
    lattice_points,
)
from .partition import PartitionLayout, window_terms

log = logging.getLogger(__name__)

DET_GUARD = 1e-12


@dataclass(frozen=True)
class NewtonConfig:
    """Newton inversion settings.

    ``tol`` bounds ``|D(y) - x|`` at convergence (the check uses ``10 * tol``);
    ``batch_size`` counts the query point itself plus ``batch_size - 1``
    seeded restarts drawn in ``[-1, 1]^3``.
    """

    tol: float = 1e-8
    max_iter: int = 100
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be > 0")
        if self.max_iter < 1 or self.batch_size < 1:
            raise InvalidArgumentError("max_iter and batch_size must be >= 1")

    def restarts(self):
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-1.0, 1.0, size=(self.batch_size - 1, 3))


def inv3(J):
    """Closed-form inverse of a stack of 3x3 matrices; returns ``(inv, det)``."""
    a, b, c = J[:, 0, 0], J[:, 0, 1], J[:, 0, 2]
    d, e, f = J[:, 1, 0], J[:, 1, 1], J[:, 1, 2]
    g, h, i = J[:, 2, 0], J[:, 2, 1], J[:, 2, 2]
    A = e * i - f * h
    B = -(d * i - f * g)
    C = d * h - e * g
    det = a * A + b * B + c * C
    adj = np.empty_like(J)
    adj[:, 0, 0] = A
    adj[:, 1, 0] = B
    adj[:, 2, 0] = C
    adj[:, 0, 1] = -(b * i - c * h)
    adj[:, 1, 1] = a * i - c * g
    adj[:, 2, 1] = -(a * h - b * g)
    adj[:, 0, 2] = b * f - c * e
    adj[:, 1, 2] = -(a * f - c * d)
    adj[:, 2, 2] = a * e - b * d
    safe = np.where(np.abs(det) < DET_GUARD, 1.0, det)
    return adj / safe[:, None, None], det


def _terms(Y, base, layout, jacobian):
    """``D(Y)`` and optionally ``J_D(Y)`` for a batch, plus the base gradient."""
    _, g, H = base.derivatives(Y, 2 if jacobian else 1)
    w = window_terms(Y, layout, order=1 if jacobian else 0)
    s = np.where(w.bit == 1, 1.0, -1.0)
    sc = s * w.value
    X = Y + sc[:, None] * g
    J = None
    if jacobian:
        J = sc[:, None, None] * H + s[:, None, None] * (g[:, :, None] * w.grad[:, None, :])
        J += np.eye(3)
    return X, J, g


def _require_direction(P):
    if np.any(np.all(P == 0, axis=1)):
        raise UndefinedDirectionError("deformation is undefined at the origin")


def deform(y, base: ScalarField, layout: PartitionLayout):
    """Move ``y`` along (bit 1) or against (bit 0) the field normal by ``C(y)``."""
    Y, single = as_points(y)
    _require_direction(Y)
    X = _terms(Y, base, layout, False)[0]
    return X[0] if single else X


def deform_jacobian(y, base: ScalarField, layout: PartitionLayout):
    Y, single = as_points(y)
    _require_direction(Y)
    J = _terms(Y, base, layout, True)[1]
    return J[0] if single else J


@dataclass
class Inversion:
    """Outcome of a batched Newton inversion."""

    y: np.ndarray
    converged: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    restarted: np.ndarray
    surface_converged: np.ndarray = dc_field(default=None)


def _newton(X, Y0, base, layout, cfg):
    Y = Y0.copy()
    n = len(X)
    residual = np.full(n, np.inf)
    iterations = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for it in range(cfg.max_iter + 1):
        if len(active) == 0:
            break
        last = it == cfg.max_iter
        D, J, _ = _terms(Y[active], base, layout, not last)
        r = D - X[active]
        res = np.linalg.norm(r, axis=1)
        ok = np.isfinite(res)
        residual[active] = np.where(ok, res, np.inf)
        done = ok & (res <= 10.0 * cfg.tol)
        converged[active[done]] = True
        if last:
            break
        Jinv, det = inv3(J)
        keep = ok & ~done & (np.abs(det) >= DET_GUARD)
        step = np.einsum("nij,nj->ni", Jinv[keep], r[keep])
        active = active[keep]
        Y[active] -= step
        iterations[active] += 1
    return Y, converged, residual, iterations


def _invert(X, base, layout, cfg):
    Y, conv, res, its = _newton(X, X, base, layout, cfg)
    restarted = ~conv
    failed = np.flatnonzero(~conv)
    if len(failed) and cfg.batch_size > 1:
        starts = cfg.restarts()
        k = len(starts)
        for lo in range(0, len(failed), max(1, 65536 // k)):
            idx = failed[lo:lo + max(1, 65536 // k)]
            Xr = np.repeat(X[idx], k, axis=0)
            Y0 = np.tile(starts, (len(idx), 1))
            Yr, cr, rr, ir = _newton(Xr, Y0, base, layout, cfg)
            rr = np.where(cr, rr, np.inf).reshape(len(idx), k)
            best = np.argmin(rr, axis=1)
            hit = np.isfinite(rr[np.arange(len(idx)), best])
            sel = np.arange(len(idx)) * k + best
            take = idx[hit]
            Y[take] = Yr[sel[hit]]
            res[take] = rr[np.arange(len(idx)), best][hit]
            conv[take] = True
            its[idx] += ir.reshape(len(idx), k).max(axis=1)
    fy = base.derivatives(Y, 0)[0]
    return Inversion(Y, conv, res, its, restarted, np.abs(fy) <= cfg.tol)


def invert_deform(x, base: ScalarField, layout: PartitionLayout, cfg: NewtonConfig = NewtonConfig(),
                  *, full=False):
    """Solve ``D(y) = x`` by Newton's method.

    The query point is the first start; when it fails, the seeded restarts
    are run and the converged candidate with the smallest residual wins.
    Raises :class:`NonConvergenceError` when no start converges, unless
    ``full`` is set, in which case the :class:`Inversion` record is returned
    as is.
    """
    X, single = as_points(x)
    inv = _invert(X, base, layout, cfg)
    if full:
        return inv
    if not np.all(inv.converged):
        worst = float(np.max(inv.residual[~inv.converged]))
        raise NonConvergenceError(
            f"Newton inversion failed for {np.count_nonzero(~inv.converged)} point(s)",
            residual=worst if single else inv.residual)
    return inv.y[0] if single else inv.y


@dataclass(frozen=True)
class WatermarkedField(ScalarField):
    """``G(x) = F(D^-1(x))`` with the analytic gradient ``J_D(y)^-T grad F(y)``.

    The Hessian is a central difference of the analytic gradient.
    """

    base: ScalarField
    layout: PartitionLayout
    newton: NewtonConfig = NewtonConfig()
    hessian_step: float = 1e-5

    def invert(self, P):
        return _invert(np.asarray(P, dtype=np.float64), self.base, self.layout, self.newton)

    def _gradient_at(self, Y):
        _, J, g = _terms(Y, self.base, self.layout, True)
        Jinv, det = inv3(J)
        if np.any(np.abs(det) < DET_GUARD):
            raise SingularJacobianError("deformation Jacobian is singular")
        return np.einsum("nji,nj->ni", Jinv, g)

    def derivatives(self, P, order=2):
        inv = self.invert(P)
        if not np.all(inv.converged):
            raise NonConvergenceError(
                f"Newton inversion failed for {np.count_nonzero(~inv.converged)} point(s)",
                residual=inv.residual)
        value = self.base.derivatives(inv.y, 0)[0]
        if order < 1:
            return value, None, None
        grad = self._gradient_at(inv.y)
        if order < 2:
            return value, grad, None
        h = self.hessian_step
        cols = []
        for e in np.eye(3):
            gp = self.derivatives(P + h * e, 1)[1]
            gm = self.derivatives(P - h * e, 1)[1]
            cols.append((gp - gm) / (2 * h))
        hess = np.stack(cols, axis=2)
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return value, grad, hess


def wm_eval(x, wf: WatermarkedField):
    return wf.eval(x)


def wm_gradient(x, wf: WatermarkedField):
    return wf.gradient(x)


def injectivity_bound(layout: PartitionLayout, min_surface_radius: float) -> float:
    """Heuristic ceiling on ``delta``: a quarter of the narrowest cell span at that radius."""
    return 0.25 * (np.pi / layout.n_s) * float(min_surface_radius)


def check_injectivity(layout: PartitionLayout, min_surface_radius: float):
    bound = injectivity_bound(layout, min_surface_radius)
    if layout.delta >= bound:
        raise InvalidArgumentError(
            f"delta={layout.delta} exceeds the injectivity bound {bound:.3g} "
            f"for surface radius {min_surface_radius:.3g}")


@dataclass
class BakeReport:
    nodes: int
    newton_failures: int
    restarted_nodes: int
    mean_iterations: float
    max_iterations: int
    max_residual: float

    @property
    def failure_fraction(self):
        return self.newton_failures / self.nodes if self.nodes else 0.0

    def to_dict(self):
        return {
            "nodes": self.nodes,
            "newton_failures": self.newton_failures,
            "failure_fraction": self.failure_fraction,
            "restarted_nodes": self.restarted_nodes,
            "mean_iterations": self.mean_iterations,
            "max_iterations": self.max_iterations,
            "max_residual": self.max_residual,
        }


def bake_watermarked(wf: WatermarkedField, dims=128, bbox=DEFAULT_BBOX, *, check_margin=True):
    """Sample ``G`` on a lattice into a standalone :class:`GridField`.

    Nodes where Newton fails take ``F(x)`` instead and are counted in the
    returned :class:`BakeReport`.
    """
    dims, bbox = _check_bake_args(dims, bbox)
    P = lattice_points(dims, bbox)

    def chunk(Xc):
        inv = wf.invert(Xc)
        Y = np.where(inv.converged[:, None], inv.y, Xc)
        vals = wf.base.derivatives(Y, 0)[0]
        res = np.where(inv.converged, inv.residual, 0.0)
        return vals, inv.converged, inv.restarted, inv.iterations, res

    vals, conv, restarted, its, res = map_chunks(chunk, P)
    failures = int(np.count_nonzero(~conv))
    if failures:
        log.warning("Newton failed at %d of %d bake nodes; used F(x) there", failures, len(P))
    vals = vals.reshape(dims)
    if check_margin:
        _check_margin(vals)
    report = BakeReport(
        nodes=len(P),
        newton_failures=failures,
        restarted_nodes=int(np.count_nonzero(restarted)),
        mean_iterations=float(its.mean()),
        max_iterations=int(its.max()),
        max_residual=float(res.max()),
    )
    return GridField(vals, bbox), report
