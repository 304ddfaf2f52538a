"""Reading the watermark back: tagging, majority decoding, detection, alignment.

The verifier holds the original field ``F`` and the layout. A suspect point
is tagged 1 when ``F > 0`` there and 0 otherwise; each partition decodes to
the majority tag of its points. Detection counts points whose tag equals the
bit embedded in their partition and applies a one-sided z-test against the
fair-coin null.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial.transform import Rotation
from scipy.stats import norm

from .errors import AlignmentFailedError, InvalidArgumentError, UndecodableMessageError
from .field import GridField, ScalarField, as_points
from .partition import PartitionLayout, _cells, bits_to_hex, spherical
from .surface import TriangleMesh

log = logging.getLogger(__name__)

ZERO_TAG_EPS = 1e-12
UNDECODABLE = -1


class Tags(NamedTuple):
    """Per-point tags; ``i``, ``j``, ``bit`` cover only the points kept."""

    i: np.ndarray
    j: np.ndarray
    bit: np.ndarray
    skipped: int


def _points_of(points):
    if isinstance(points, TriangleMesh):
        return points.vertices
    if hasattr(points, "points"):
        return np.asarray(points.points, dtype=np.float64)
    return as_points(points)[0]


def tag_points(points, base: ScalarField, layout: PartitionLayout) -> Tags:
    """Partition and sign bit of ``base`` for every point.

    Points at the origin have no partition and are skipped (counted in
    ``skipped``). ``|F| < 1e-12`` tags as 0.
    """
    P = _points_of(points)
    r, theta, phi = spherical(P)
    keep = r > 0
    P, theta, phi = P[keep], theta[keep], phi[keep]
    i, j = _cells(theta, phi, layout.n_s)
    v = base.derivatives(P, 0)[0] if len(P) else np.zeros(0)
    bit = ((v > 0) & (np.abs(v) >= ZERO_TAG_EPS)).astype(np.int8)
    return Tags(i, j, bit, int(np.count_nonzero(~keep)))


@dataclass
class Decoded:
    """Per-partition majority decoding.

    ``bits`` is an ``(n_s, n_s)`` grid with ``-1`` for undecodable (tied or
    empty) partitions. ``message`` aggregates repetitions of each message bit
    by majority over its decodable partitions; slots with no majority are
    ``-1``.
    """

    bits: np.ndarray
    count_1: np.ndarray
    count_0: np.ndarray
    embedded: np.ndarray
    message: np.ndarray

    @property
    def decodable(self):
        return self.bits != UNDECODABLE

    @property
    def n_decodable(self):
        return int(np.count_nonzero(self.decodable))

    @property
    def undecodable_partitions(self):
        return int(self.bits.size - self.n_decodable)

    @property
    def bit_accuracy(self):
        d = self.decodable
        if not d.any():
            return None
        return float(np.mean(self.bits[d] == self.embedded[d]))

    @property
    def message_hex(self):
        return bits_to_hex(np.where(self.message < 0, 0, self.message))


def _tally(tags: Tags, layout: PartitionLayout):
    n_s = layout.n_s
    flat = tags.i * n_s + tags.j
    c1 = np.bincount(flat, weights=tags.bit, minlength=n_s * n_s).astype(np.int64)
    tot = np.bincount(flat, minlength=n_s * n_s).astype(np.int64)
    return c1.reshape(n_s, n_s), (tot - c1).reshape(n_s, n_s)


def _decode_tags(tags: Tags, layout: PartitionLayout) -> Decoded:
    c1, c0 = _tally(tags, layout)
    bits = np.full(c1.shape, UNDECODABLE, dtype=np.int8)
    bits[c1 > c0] = 1
    bits[c0 > c1] = 0
    slot = layout.message_slot(*np.indices(c1.shape))
    ok = bits != UNDECODABLE
    votes1 = np.bincount(slot[ok], weights=bits[ok], minlength=layout.n_m)
    votes = np.bincount(slot[ok], minlength=layout.n_m)
    msg = np.full(layout.n_m, UNDECODABLE, dtype=np.int8)
    msg[2 * votes1 > votes] = 1
    msg[(2 * votes1 < votes)] = 0
    return Decoded(bits, c1, c0, layout.bit_grid(), msg)


def decode(points, base: ScalarField, layout: PartitionLayout) -> Decoded:
    """Majority-decode every partition; raises when none is decodable."""
    dec = _decode_tags(tag_points(points, base, layout), layout)
    if dec.n_decodable == 0:
        raise UndecodableMessageError("no partition has a strict majority")
    return dec


def z_score(matches, n_points):
    return 2.0 * (matches - n_points / 2.0) / np.sqrt(n_points)


def z_threshold(alpha):
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    return float(norm.ppf(1.0 - alpha))


@dataclass
class DetectionReport:
    n_points: int
    matches: int
    z_score: float
    alpha: float
    threshold: float
    decoded: Decoded
    skipped: int = 0

    @property
    def reject(self):
        return self.z_score > self.threshold

    @property
    def verdict(self):
        return "reject_h0" if self.reject else "accept_h0"

    @property
    def bit_accuracy(self):
        return self.decoded.bit_accuracy

    def to_dict(self):
        return {
            "n_points": self.n_points,
            "matches": self.matches,
            "z_score": self.z_score,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "bit_accuracy": self.bit_accuracy,
            "decoded_message_hex": self.decoded.message_hex,
            "undecodable_partitions": self.decoded.undecodable_partitions,
            "skipped_points": self.skipped,
        }


def detect(points, base: ScalarField, layout: PartitionLayout, alpha=0.001) -> DetectionReport:
    """One-sided z-test on the number of points whose tag matches the embedded bit."""
    thr = z_threshold(alpha)
    tags = tag_points(points, base, layout)
    n = len(tags.bit)
    if n < 1:
        raise InvalidArgumentError("detection needs at least one point off the origin")
    embedded = layout.bit_grid()[tags.i, tags.j]
    s = int(np.count_nonzero(tags.bit == embedded))
    return DetectionReport(n, s, float(z_score(s, n)), float(alpha), thr,
                           _decode_tags(tags, layout), tags.skipped)


# ---------------------------------------------------------------- alignment


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * R x + translation``.

    The rotation is an angle ``beta`` about the unit axis with polar angle
    ``axis_theta`` and azimuth ``axis_phi``.
    """

    scale: float = 1.0
    beta: float = 0.0
    axis_theta: float = 0.0
    axis_phi: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgumentError("scale must be > 0")
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))

    @property
    def axis(self):
        st = np.sin(self.axis_theta)
        return np.array([st * np.cos(self.axis_phi), st * np.sin(self.axis_phi), np.cos(self.axis_theta)])

    @property
    def rotvec(self):
        return self.beta * self.axis

    @property
    def rotation(self):
        return Rotation.from_rotvec(self.rotvec)

    @property
    def matrix(self):
        return self.rotation.as_matrix()

    @classmethod
    def from_params(cls, scale, rotvec, translation):
        rv = np.asarray(rotvec, dtype=np.float64)
        beta = float(np.linalg.norm(rv))
        if beta == 0:
            return cls(float(scale), 0.0, 0.0, 0.0, tuple(translation))
        ax = rv / beta
        return cls(float(scale), beta, float(np.arccos(np.clip(ax[2], -1, 1))),
                   float(np.arctan2(ax[1], ax[0])), tuple(translation))

    @classmethod
    def from_rotation(cls, scale, rotation: Rotation, translation):
        return cls.from_params(scale, rotation.as_rotvec(), translation)

    def apply(self, points):
        P, single = as_points(points)
        out = self.scale * P @ self.matrix.T + np.asarray(self.translation)
        return out[0] if single else out

    def apply_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        nrm = None if mesh.normals is None else mesh.normals @ self.matrix.T
        return TriangleMesh(self.apply(mesh.vertices), mesh.faces.copy(), nrm)

    def inverse(self):
        rinv = self.rotation.inv()
        t = -rinv.apply(np.asarray(self.translation)) / self.scale
        return SimilarityTransform.from_rotation(1.0 / self.scale, rinv, t)

    def compose(self, other: "SimilarityTransform"):
        """``self`` after ``other``."""
        rot = self.rotation * other.rotation
        t = self.scale * self.rotation.apply(np.asarray(other.translation)) + np.asarray(self.translation)
        return SimilarityTransform.from_rotation(self.scale * other.scale, rot, t)

    def to_dict(self):
        return {"scale": self.scale, "beta": self.beta, "axis_theta": self.axis_theta,
                "axis_phi": self.axis_phi, "translation": list(self.translation)}


@dataclass
class AlignmentResult:
    transform: SimilarityTransform
    mesh: TriangleMesh
    residual: float
    coarse_residual: float


def coarse_rotations(step_deg=15.0):
    """Identity plus every (axis, angle) pair over 26 lattice axes and ``step`` increments up to 180 degrees."""
    axes = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=np.float64)
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.deg2rad(np.arange(step_deg, 180.0 + 1e-9, step_deg))
    rv = (axes[:, None, :] * angles[None, :, None]).reshape(-1, 3)
    return Rotation.from_rotvec(np.vstack([np.zeros(3), rv]))


class _GridLookup:
    """Cheap trilinear |G| for coarse scoring, penalised outside the grid box."""

    def __init__(self, grid: GridField):
        self.grid = grid
        self.values = grid.values.astype(np.float64)

    def __call__(self, P):
        idx = self.grid.to_index(P)
        v = ndimage.map_coordinates(self.values, idx.T, order=1, mode="nearest")
        outside = np.linalg.norm(P - np.clip(P, self.grid.lower, self.grid.upper), axis=1)
        return np.abs(v) + outside


def _exact_value(field, P):
    """Field value with points outside a grid's box clamped in and charged their distance."""
    if isinstance(field, GridField):
        Q = np.clip(P, field.lower, field.upper)
        v = field.derivatives(Q, 0)[0]
        return v + np.where(v >= 0, 1.0, -1.0) * np.linalg.norm(P - Q, axis=1)
    return field.derivatives(P, 0)[0]


def _coarse_search(V, score, scales, rotations, translations, keep):
    """Best ``keep`` grid cells, at most one per rotation so the seeds differ."""
    R = rotations.as_matrix()
    per_rotation = {}
    for si, a in enumerate(scales):
        for ri in range(len(R)):
            base = a * V @ R[ri].T
            P = (base[None, :, :] + translations[:, None, :]).reshape(-1, 3)
            s = score(P).reshape(len(translations), len(V)).mean(axis=1)
            ti = int(np.argmin(s))
            cell = (float(s[ti]), si, ri, ti)
            if ri not in per_rotation or cell < per_rotation[ri]:
                per_rotation[ri] = cell
    return sorted(per_rotation.values())[:keep]


def align(mesh: TriangleMesh, wm_field: ScalarField, *, seed=0, coarse_vertices=256,
          fine_vertices=2000, top_k=5, scales=None, rotation_step_deg=15.0,
          translation_steps=5, translation_range=0.1, max_residual=0.05) -> AlignmentResult:
    """Find ``T`` minimising the mean ``|G(T v)|`` over mesh vertices.

    A coarse grid over similarity parameters ranks candidate
    cells on a vertex subsample; the best ``top_k`` seed a bounded
    least-squares refinement on up to ``fine_vertices`` vertices. The final
    residual is the mean ``|G|`` over all vertices of the transformed mesh.
    Raises :class:`AlignmentFailedError` when it exceeds ``max_residual``.
    """
    V = mesh.vertices
    if len(V) == 0:
        raise InvalidArgumentError("cannot align an empty mesh")
    rng = np.random.default_rng(seed)
    sub_c = V[rng.choice(len(V), min(coarse_vertices, len(V)), replace=False)]
    sub_f = V[rng.choice(len(V), min(fine_vertices, len(V)), replace=False)]
    if scales is None:
        scales = np.exp(np.linspace(np.log(0.8), np.log(1.25), 5))
    rotations = coarse_rotations(rotation_step_deg)
    g = np.linspace(-translation_range, translation_range, translation_steps)
    translations = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    if isinstance(wm_field, GridField):
        score = _GridLookup(wm_field)
    else:
        def score(P):
            return np.abs(_exact_value(wm_field, P))
    cells = _coarse_search(sub_c, score, scales, rotations, translations, top_k)
    log.info("coarse alignment best cell score %.4g", cells[0][0])

    def residuals(x, P):
        a = np.exp(x[0])
        Q = a * Rotation.from_rotvec(x[1:4]).apply(P) + x[4:7]
        return _exact_value(wm_field, Q)

    lb = np.array([np.log(0.5)] + [-np.inf] * 3 + [-1.0] * 3)
    ub = -lb
    ub[1:4] = np.inf
    best = None
    for _, si, ri, ti in cells:
        x0 = np.concatenate([[np.log(scales[si])], rotations[ri].as_rotvec(), translations[ti]])
        sol = optimize.least_squares(residuals, x0, args=(sub_f,), bounds=(lb, ub),
                                     x_scale=np.array([0.1, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05]),
                                     xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=200)
        r = float(np.mean(np.abs(residuals(sol.x, sub_f))))
        if best is None or r < best[0]:
            best = (r, sol.x)
    x = best[1]
    T = SimilarityTransform.from_params(np.exp(x[0]), x[1:4], x[4:7])
    aligned = T.apply_mesh(mesh)
    residual = float(np.mean(np.abs(_exact_value(wm_field, aligned.vertices))))
    if residual > max_residual:
        raise AlignmentFailedError(
            f"alignment residual {residual:.4g} exceeds {max_residual}", transform=T, residual=residual)
    return AlignmentResult(T, aligned, residual, float(cells[0][0]))
