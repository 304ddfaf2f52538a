"""Triangle meshes, on-surface sampling and isosurface extraction.

Marching cubes uses the classic 256-case table with the corner and edge
numbering below; vertices are welded through a global key per lattice edge,
so the output is deterministic and independent of the chunking. Dual
contouring places one vertex per sign-changing cell at the minimiser of a
regularised quadratic error built from gradient tangent planes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._mc_tables import TRI_TABLE
from ._parallel import map_chunks
from .errors import (
    EmptySurfaceError,
    InvalidArgumentError,
    InvalidMeshError,
    OutOfDomainError,
    SamplingExhaustedError,
)
from .field import DEFAULT_BBOX, GridField, ScalarField, _check_bake_args

log = logging.getLogger(__name__)

# corner c sits at CORNER_OFFSETS[c] inside its cell
CORNER_OFFSETS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

# edge e joins corners EDGE_CORNERS[e]
EDGE_CORNERS = np.array([
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
], dtype=np.int64)


def _table_arrays():
    table = np.full((256, 16), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for k, row in enumerate(TRI_TABLE):
        table[k, :len(row)] = row
        counts[k] = len(row)
    return table, counts


_TABLE, _TABLE_COUNTS = _table_arrays()

# for each local edge: the lower lattice node offset and the edge axis
_EDGE_BASE = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
_EDGE_AXIS = np.argmax(np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 1]] - CORNER_OFFSETS[EDGE_CORNERS[:, 0]]), axis=1)


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh with optional unit vertex normals."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        nv = len(self.vertices)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= nv:
                raise InvalidMeshError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise InvalidMeshError("degenerate face with a repeated vertex index")
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidMeshError("non-finite vertex coordinates")
        if self.normals is not None:
            n = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != nv:
                raise InvalidMeshError(f"{len(n)} normals for {nv} vertices")
            if nv and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-6:
                raise InvalidMeshError("vertex normals must be unit length")
            self.normals = n

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self):
        return TriangleMesh(self.vertices.copy(), self.faces.copy(),
                            None if self.normals is None else self.normals.copy())

    def with_vertices(self, vertices, normals=None):
        return TriangleMesh(vertices, self.faces.copy(), normals)

    def corners(self):
        """``(m, 3, 3)`` array of face corner positions."""
        return self.vertices[self.faces]

    def face_normals(self, unit=True):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if unit:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(length > 0, length, 1.0)
        return n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def signed_volume(self):
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def edges(self):
        """Directed half-edges ``(3m, 2)`` in face order."""
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    def unique_edges(self):
        e = np.sort(self.edges(), axis=1)
        return np.unique(e, axis=0)

    def mean_edge_length(self):
        e = self.unique_edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def is_watertight(self):
        """Every undirected edge is used by exactly two faces, once per direction."""
        if self.n_faces == 0:
            return False
        h = self.edges()
        und, counts = np.unique(np.sort(h, axis=1), axis=0, return_counts=True)
        if np.any(counts != 2):
            return False
        directed = np.unique(h, axis=0)
        return len(directed) == len(h)

    def euler_characteristic(self):
        used = np.unique(self.faces)
        return len(used) - len(self.unique_edges()) + self.n_faces

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def sample(self, n, rng, *, with_normals=False):
        """Area-uniform points on the faces.

        Returns ``(points, face_index, barycentric)``; when ``with_normals`` is
        set, a fourth item holds barycentrically interpolated vertex normals.
        """
        if self.n_faces == 0:
            raise EmptySurfaceError("cannot sample a mesh without faces")
        areas = self.face_areas()
        total = areas.sum()
        if total <= 0:
            raise EmptySurfaceError("mesh has zero area")
        cdf = np.cumsum(areas) / total
        fi = np.searchsorted(cdf, rng.random(n), side="right")
        fi = np.minimum(fi, self.n_faces - 1)
        u, v = rng.random(n), rng.random(n)
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        bary = np.stack([1.0 - u - v, u, v], axis=1)
        pts = np.einsum("ni,nij->nj", bary, self.corners()[fi])
        if not with_normals:
            return pts, fi, bary
        normals = self.normals if self.normals is not None else compute_vertex_normals(self).normals
        nrm = np.einsum("ni,nij->nj", bary, normals[self.faces[fi]])
        nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
        return pts, fi, bary, nrm


def compute_vertex_normals(mesh: TriangleMesh) -> TriangleMesh:
    """Area-weighted average of incident face normals, normalised.

    Vertices touching no face of positive area get ``+z``.
    """
    fn = mesh.face_normals(unit=False)          # length = 2 * area
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1)
    bad = length == 0
    acc[bad] = (0.0, 0.0, 1.0)
    length[bad] = 1.0
    return TriangleMesh(mesh.vertices, mesh.faces, acc / length[:, None])


@dataclass
class SampleSet:
    """On-surface points of a field, with the tolerance they were projected to."""

    points: np.ndarray
    tol: float = 1e-6

    @property
    def count(self):
        return len(self.points)


def _project(field, X, tol, max_iter):
    """Newton-type descent ``x <- x - F grad F / |grad F|^2`` on a batch."""
    X = X.copy()
    alive = np.ones(len(X), dtype=bool)
    ok = np.zeros(len(X), dtype=bool)
    bounded = isinstance(field, GridField)
    for _ in range(max_iter + 1):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        if bounded:
            inside = field.contains(X[idx])
            alive[idx[~inside]] = False
            idx = idx[inside]
        v, g, _ = field.derivatives(X[idx], 1)
        conv = np.abs(v) <= tol
        ok[idx[conv]] = True
        alive[idx[conv]] = False
        idx, v, g = idx[~conv], v[~conv], g[~conv]
        g2 = np.einsum("ij,ij->i", g, g)
        flat = g2 < 1e-24
        alive[idx[flat]] = False
        idx, v, g, g2 = idx[~flat], v[~flat], g[~flat], g2[~flat]
        X[idx] -= (v / g2)[:, None] * g
    return X, ok


def sample_surface(field: ScalarField, n: int, seed=0, tol=1e-6, *, band=0.05,
                   max_iter=50, box=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), max_rounds=200):
    """Draw ``n`` points on the zero set of ``field``.

    Candidates are uniform in ``box``; those with ``|F| <= band`` are kept so
    that the projected set is close to area-uniform, then projected by up to
    ``max_iter`` descent steps and discarded unless ``|F| <= tol``.
    """
    n = int(n)
    if n < 0:
        raise InvalidArgumentError("sample count must be >= 0")
    if n == 0:
        return SampleSet(np.zeros((0, 3)), tol)
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    batch = max(4096, 8 * n)
    out, have = [], 0
    for _ in range(max_rounds):
        C = rng.uniform(lo, hi, size=(batch, 3))
        if isinstance(field, GridField):
            C = C[field.contains(C)]
        v = field.derivatives(C, 0)[0]
        C = C[np.abs(v) <= band]
        if len(C) == 0:
            continue
        P, ok = _project(field, C, tol, max_iter)
        P = P[ok]
        out.append(P)
        have += len(P)
        if have >= n:
            return SampleSet(np.concatenate(out)[:n], tol)
    raise SamplingExhaustedError(f"found {have} of {n} surface points in {max_rounds} rounds")


def lattice_values(field: ScalarField, dims, bbox=DEFAULT_BBOX):
    """Field values on an ``(nx, ny, nz)`` lattice, evaluated one x-slab block at a time."""
    dims, bbox = _check_bake_args(dims, bbox)
    axes = [np.linspace(bbox[0][a], bbox[1][a], dims[a]) for a in range(3)]
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    slab = np.stack([np.zeros(yy.size), yy.ravel(), zz.ravel()], axis=1)
    per = max(1, 262144 // len(slab))
    blocks = np.arange(dims[0])

    def run(ix):
        P = np.tile(slab, (len(ix), 1))
        P[:, 0] = np.repeat(axes[0][ix], len(slab))
        return field.derivatives(P, 0)[0]

    vals = map_chunks(run, blocks, chunk=per)
    return vals.reshape(dims), axes, bbox


def _vertex_normals_from_field(field, V, mesh_faces):
    try:
        g = field.derivatives(V, 1)[1]
    except (OutOfDomainError, ArithmeticError):
        g = np.zeros_like(V)
    length = np.linalg.norm(g, axis=1)
    good = np.isfinite(length) & (length > 1e-12)
    if not np.all(good):
        fallback = compute_vertex_normals(TriangleMesh(V, mesh_faces)).normals
        g[~good] = fallback[~good]
        length[~good] = 1.0
    return g / length[:, None]


def _resolution(resolution):
    r = int(resolution)
    if r < 8:
        raise InvalidArgumentError(f"resolution must be >= 8, got {resolution}")
    return r


def marching_cubes(field: ScalarField, resolution=128, bbox=DEFAULT_BBOX, *, normals=True,
                   values=None):
    """Extract the zero set of ``field`` on a ``resolution^3`` node lattice.

    ``values`` may supply precomputed lattice samples (shape ``(r, r, r)``).
    Faces wind counter-clockwise seen from outside (positive field).
    """
    r = _resolution(resolution)
    if values is None:
        V, axes, bbox = lattice_values(field, r, bbox)
    else:
        V = np.asarray(values, dtype=np.float64)
        _, bbox = _check_bake_args(V.shape, bbox)
        axes = [np.linspace(bbox[0][a], bbox[1][a], V.shape[a]) for a in range(3)]
    dims = np.array(V.shape)
    inside = V < 0
    n = dims - 1
    code = np.zeros(tuple(n), dtype=np.uint8)
    for c, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        code |= (inside[ox:ox + n[0], oy:oy + n[1], oz:oz + n[2]].astype(np.uint8) << c)
    cells = np.flatnonzero((code != 0) & (code != 255))
    if len(cells) == 0:
        raise EmptySurfaceError("field has no sign change on the lattice")
    cidx = np.stack(np.unravel_index(cells, tuple(n)), axis=1)
    cases = code.ravel()[cells]
    counts = _TABLE_COUNTS[cases]
    rows = np.repeat(np.arange(len(cells)), counts)
    slot = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    local_edge = _TABLE[cases[rows], slot]
    # global key of each lattice edge: axis * N + flat index of its lower node
    node = cidx[rows] + _EDGE_BASE[local_edge]
    axis = _EDGE_AXIS[local_edge]
    total = int(np.prod(dims))
    key = axis * total + np.ravel_multi_index(node.T, tuple(dims))
    ukeys, inverse = np.unique(key, return_inverse=True)
    # vertex positions by linear interpolation along each lattice edge
    uaxis = ukeys // total
    unode = np.stack(np.unravel_index(ukeys % total, tuple(dims)), axis=1)
    unode2 = unode.copy()
    unode2[np.arange(len(ukeys)), uaxis] += 1
    v0 = V[tuple(unode.T)]
    v1 = V[tuple(unode2.T)]
    t = v0 / (v0 - v1)
    lo = np.asarray(bbox[0])
    h = (np.asarray(bbox[1]) - lo) / (dims - 1)
    pos = lo + unode * h
    pos[np.arange(len(ukeys)), uaxis] += t * h[uaxis]
    faces = inverse.reshape(-1, 3)
    # the table winds faces clockwise from outside; flip to counter-clockwise
    faces = faces[:, ::-1].copy()
    nrm = _vertex_normals_from_field(field, pos, faces) if normals and field is not None else None
    return TriangleMesh(pos, faces, nrm)


def dual_contouring(field: ScalarField, resolution=128, bbox=DEFAULT_BBOX, *, normals=True,
                    reg=1e-2):
    """Dual contouring with one QEF vertex per sign-changing cell.

    Each cell solves ``min sum (n_k . (x - p_k))^2 + reg * |x - m|^2`` where
    ``p_k, n_k`` are edge crossings and field normals there and ``m`` their
    mean; the result is clamped to the cell. Every interior sign-changing
    lattice edge emits a quad over its four cells, split into two triangles.
    """
    r = _resolution(resolution)
    V, axes, bbox = lattice_values(field, r, bbox)
    dims = np.array(V.shape)
    lo = np.asarray(bbox[0])
    h = (np.asarray(bbox[1]) - lo) / (dims - 1)
    inside = V < 0
    ncell = dims - 1

    crossings = []   # per axis: lower node index, crossing point
    for a in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[a] = slice(0, -1)
        sl1[a] = slice(1, None)
        change = inside[tuple(sl0)] != inside[tuple(sl1)]
        nodes = np.argwhere(change)
        va = V[tuple(sl0)][change]
        vb = V[tuple(sl1)][change]
        t = va / (va - vb)
        p = lo + nodes * h
        p[:, a] += t * h[a]
        crossings.append((nodes, p, inside[tuple(sl0)][change]))
    if sum(len(c[0]) for c in crossings) == 0:
        raise EmptySurfaceError("field has no sign change on the lattice")

    all_p = np.concatenate([c[1] for c in crossings])
    g = field.derivatives(all_p, 1)[1]
    g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)

    # accumulate QEF terms into every cell adjacent to each crossing
    ncells = int(np.prod(ncell))
    AtA = np.zeros((ncells, 3, 3))
    Atb = np.zeros((ncells, 3))
    msum = np.zeros((ncells, 3))
    mcnt = np.zeros(ncells)
    start = 0
    for a, (nodes, p, _) in enumerate(crossings):
        nk = g[start:start + len(p)]
        start += len(p)
        others = [b for b in range(3) if b != a]
        for d1 in (0, 1):
            for d2 in (0, 1):
                c = nodes.copy()
                c[:, others[0]] -= d1
                c[:, others[1]] -= d2
                ok = np.all((c >= 0) & (c < ncell), axis=1)
                flat = np.ravel_multi_index(c[ok].T, tuple(ncell))
                nn = nk[ok]
                np.add.at(AtA, flat, nn[:, :, None] * nn[:, None, :])
                np.add.at(Atb, flat, nn * np.einsum("ij,ij->i", nn, p[ok])[:, None])
                np.add.at(msum, flat, p[ok])
                np.add.at(mcnt, flat, 1.0)
    active = np.flatnonzero(mcnt > 0)
    mass = msum[active] / mcnt[active, None]
    A = AtA[active] + reg * np.eye(3)
    b = Atb[active] + reg * mass
    x = np.linalg.solve(A, b[:, :, None])[:, :, 0]
    cell_idx = np.stack(np.unravel_index(active, tuple(ncell)), axis=1)
    cmin = lo + cell_idx * h
    x = np.clip(x, cmin, cmin + h)
    vid = np.full(ncells, -1, dtype=np.int64)
    vid[active] = np.arange(len(active))

    quads = []
    for a, (nodes, _, in0) in enumerate(crossings):
        # (u, w, a) is a cyclic permutation, so (u, w) is right-handed about a
        u, w = (a + 1) % 3, (a + 2) % 3
        # interior edges only: all four surrounding cells exist
        ok = (nodes[:, u] >= 1) & (nodes[:, w] >= 1) & (nodes[:, u] < ncell[u]) & (nodes[:, w] < ncell[w])
        nd = nodes[ok]
        ring = []
        for du, dw in ((1, 1), (0, 1), (0, 0), (1, 0)):
            c = nd.copy()
            c[:, u] -= du
            c[:, w] -= dw
            ring.append(vid[np.ravel_multi_index(c.T, tuple(ncell))])
        q = np.stack(ring, axis=1)
        # ring (u,w) order is counter-clockwise about +a; outward is the
        # direction from the inside node to the outside node
        flip = ~in0[ok]
        q[flip] = q[flip, ::-1]
        quads.append(q)
    q = np.concatenate(quads)
    tris = np.concatenate([q[:, [0, 1, 2]], q[:, [0, 2, 3]]])
    degenerate = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    tris = tris[~degenerate]
    used, remap = np.unique(tris, return_inverse=True)
    pos = x[used]
    faces = remap.reshape(-1, 3)
    nrm = _vertex_normals_from_field(field, pos, faces) if normals else None
    return TriangleMesh(pos, faces, nrm)
