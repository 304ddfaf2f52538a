"""Mesh distortions used to probe watermark robustness.

Attacks are pure functions from mesh to mesh. :func:`parse_attack` reads the
command-line grammar ``name:arg1[:arg2]``:

================  ===========================================================
``gaussian:s``    i.i.d. normal noise of std ``s`` on every coordinate
``rotate:deg[:x,y,z]``  rotation by ``deg`` degrees (random axis when omitted)
``scale:f``       uniform scaling about the origin
``translate:x,y,z``  translation
``combined:deg,f[:x,y,z]``  rotation (random axis), then scaling, then translation
``quantize:b``    coordinates snapped to ``2**b`` levels over the mesh box
``simplify:r``    quadric-error edge collapse removing fraction ``r`` of vertices
``smooth:n[:lam]``  ``n`` uniform Laplacian steps with weight ``lam`` (0.5)
``remesh:L[:n]``  ``n`` isotropic remeshing passes at edge length ``L``
                  (``mean`` for the input's mean edge length; ``n`` = 3)
================  ===========================================================
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.transform import Rotation

from ._meshedit import EditMesh, _dist2
from .errors import InvalidArgumentError, InvalidMeshError
from .metrics import SurfaceQueryIndex
from .surface import TriangleMesh, compute_vertex_normals
from .verify import SimilarityTransform


def _renormal(mesh: TriangleMesh, V, F=None):
    return compute_vertex_normals(TriangleMesh(V, mesh.faces if F is None else F))


def gaussian_noise(mesh: TriangleMesh, sigma, seed=0) -> TriangleMesh:
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return mesh.copy()
    rng = np.random.default_rng(seed)
    return _renormal(mesh, mesh.vertices + rng.normal(0.0, sigma, mesh.vertices.shape))


def affine(mesh: TriangleMesh, transform: SimilarityTransform) -> TriangleMesh:
    """Apply a similarity transform; normals rotate with the surface."""
    return transform.apply_mesh(mesh)


def random_axis(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def rotate(mesh, angle_deg, axis=None, seed=0):
    if axis is None:
        axis = random_axis(np.random.default_rng(seed))
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    rot = Rotation.from_rotvec(np.deg2rad(angle_deg) * axis)
    return affine(mesh, SimilarityTransform.from_rotation(1.0, rot, (0, 0, 0)))


def scale(mesh, factor):
    if not factor > 0:
        raise InvalidArgumentError("scale factor must be > 0")
    return affine(mesh, SimilarityTransform(scale=float(factor)))


def translate(mesh, t):
    return affine(mesh, SimilarityTransform(translation=tuple(t)))


def combined(mesh, angle_deg, factor, t=(0.0, 0.0, 0.0), seed=0):
    axis = random_axis(np.random.default_rng(seed))
    rot = Rotation.from_rotvec(np.deg2rad(angle_deg) * axis)
    return affine(mesh, SimilarityTransform.from_rotation(float(factor), rot, t))


def quantize(mesh: TriangleMesh, bits) -> TriangleMesh:
    """Snap each coordinate to ``2**bits`` evenly spaced levels spanning the mesh box."""
    bits = int(bits)
    if not 1 <= bits <= 32:
        raise InvalidArgumentError("bits must lie in [1, 32]")
    lo, hi = mesh.bounds()
    step = (hi - lo) / (2.0 ** bits - 1)
    step = np.where(step > 0, step, 1.0)
    V = lo + np.round((mesh.vertices - lo) / step) * step
    return _renormal(mesh, V)


def _adjacency(n, faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def _umbrella(V, A):
    deg = np.asarray(A.sum(axis=1)).ravel()
    deg = np.where(deg > 0, deg, 1.0)
    return (A @ V) / deg[:, None] - V


def smooth(mesh: TriangleMesh, iterations=1, lam=0.5) -> TriangleMesh:
    """Uniform Laplacian smoothing ``v <- v + lam * (mean(neighbours) - v)``."""
    iterations = int(iterations)
    if iterations < 0:
        raise InvalidArgumentError("iterations must be >= 0")
    if not 0 < lam <= 1:
        raise InvalidArgumentError("lambda must lie in (0, 1]")
    if iterations == 0:
        return mesh.copy()
    A = _adjacency(mesh.n_vertices, mesh.faces)
    V = mesh.vertices.copy()
    for _ in range(iterations):
        V = V + lam * _umbrella(V, A)
    return _renormal(mesh, V)


# ------------------------------------------------------------- simplification


def _face_quadrics(V, F):
    c = V[F]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    area2 = np.linalg.norm(n, axis=1)
    unit = n / np.where(area2 > 0, area2, 1.0)[:, None]
    d = -np.einsum("ij,ij->i", unit, c[:, 0])
    plane = np.concatenate([unit, d[:, None]], axis=1)
    K = plane[:, :, None] * plane[:, None, :] * (0.5 * area2)[:, None, None]
    Q = np.zeros((len(V), 4, 4))
    for k in range(3):
        np.add.at(Q, F[:, k], K)
    iu = np.triu_indices(4)
    return [list(q) for q in Q[:, iu[0], iu[1]]]


# packed upper triangle order: 00 01 02 03 11 12 13 22 23 33
def _q_eval(q, p):
    x, y, z = p
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
            + q[4] * y * y + 2 * q[5] * y * z + 2 * q[6] * y
            + q[7] * z * z + 2 * q[8] * z + q[9])


def _q_optimum(q, pu, pv):
    a, b, c, d, e, f, g, h, i, _ = q
    # solve [[a b c] [b e f] [c f h]] x = -[d g i]
    det = a * (e * h - f * f) - b * (b * h - f * c) + c * (b * f - e * c)
    scale = max(abs(a), abs(e), abs(h), 1e-300) ** 3
    if abs(det) > 1e-10 * scale:
        r0, r1, r2 = -d, -g, -i
        x = (r0 * (e * h - f * f) - b * (r1 * h - f * r2) + c * (r1 * f - e * r2)) / det
        y = (a * (r1 * h - f * r2) - r0 * (b * h - f * c) + c * (b * r2 - r1 * c)) / det
        z = (a * (e * r2 - r1 * f) - b * (b * r2 - r1 * c) + r0 * (b * f - e * c)) / det
        p = (x, y, z)
        # keep the optimum near the edge; far solutions come from flat regions
        mid = ((pu[0] + pv[0]) / 2, (pu[1] + pv[1]) / 2, (pu[2] + pv[2]) / 2)
        if _dist2(p, mid) <= 4.0 * _dist2(pu, pv):
            return p, _q_eval(q, p)
    mid = ((pu[0] + pv[0]) / 2, (pu[1] + pv[1]) / 2, (pu[2] + pv[2]) / 2)
    best = min((pu, pv, mid), key=lambda p: _q_eval(q, p))
    return best, _q_eval(q, best)


def simplify(mesh: TriangleMesh, fraction) -> TriangleMesh:
    """Quadric-error edge collapse until ``fraction`` of the vertices are gone.

    Collapses that break the link condition or fold a neighbouring face are
    skipped, so a closed manifold input stays closed and manifold.
    """
    if not 0 <= fraction < 1:
        raise InvalidArgumentError("fraction must lie in [0, 1)")
    if fraction == 0 or mesh.n_faces == 0:
        return mesh.copy()
    em = EditMesh(mesh.vertices, mesh.faces)
    Q = _face_quadrics(mesh.vertices, mesh.faces)
    target = em.n_alive - int(round(fraction * em.n_alive))
    version = [0] * len(em.pos)
    heap = []

    def push(u, v):
        q = [x + y for x, y in zip(Q[u], Q[v])]
        p, cost = _q_optimum(q, em.pos[u], em.pos[v])
        heapq.heappush(heap, (cost, u, v, version[u], version[v], p))

    for u, v in em.edges().tolist():
        push(u, v)
    while heap and em.n_alive > target:
        cost, u, v, vu, vv, p = heapq.heappop(heap)
        if version[u] != vu or version[v] != vv or not em.alive(u) or not em.alive(v):
            continue
        if not em.link_ok(u, v) or em.collapse_flips(u, v, p):
            continue
        em.collapse(u, v, p)
        Q[v] = [x + y for x, y in zip(Q[u], Q[v])]
        version[u] += 1
        version[v] += 1
        for w in em.neighbors(v):
            push(min(v, w), max(v, w))
    V, F, _ = em.arrays()
    return compute_vertex_normals(TriangleMesh(V, F))


# ------------------------------------------------------------- remeshing


def _check_closed_manifold(mesh):
    h = mesh.edges()
    _, counts = np.unique(np.sort(h, axis=1), axis=0, return_counts=True)
    if np.any(counts != 2) or len(np.unique(h, axis=0)) != len(h):
        raise InvalidMeshError("remeshing needs a closed, consistently oriented 2-manifold")


def _split_long(em, hi):
    hi2 = hi * hi
    while True:
        E = em.edges()
        long = E[em.edge_lengths(E) > hi]
        if len(long) == 0:
            return
        for u, v in long.tolist():
            if em.edge_faces(u, v) and _dist2(em.pos[u], em.pos[v]) > hi2:
                em.split(u, v)


def _collapse_short(em, lo, hi):
    E = em.edges()
    L = em.edge_lengths(E)
    order = np.argsort(L, kind="stable")
    hi2 = hi * hi
    lo2 = lo * lo
    for u, v in E[order[L[order] < lo]].tolist():
        if not (em.alive(u) and em.alive(v)) or not em.edge_faces(u, v):
            continue
        pu, pv = em.pos[u], em.pos[v]
        if _dist2(pu, pv) >= lo2:
            continue
        mid = ((pu[0] + pv[0]) / 2, (pu[1] + pv[1]) / 2, (pu[2] + pv[2]) / 2)
        ring = em.neighbors(u) | em.neighbors(v)
        if any(_dist2(mid, em.pos[w]) > hi2 for w in ring if w != u and w != v):
            continue
        if not em.link_ok(u, v) or em.collapse_flips(u, v, mid):
            continue
        em.collapse(u, v, mid)


def _equalize_valence(em):
    valence = {}

    def val(x):
        if x not in valence:
            valence[x] = len(em.neighbors(x))
        return valence[x]

    for u, v in em.edges().tolist():
        if len(em.edge_faces(u, v)) != 2:
            continue
        f1, f2 = em._oriented_pair(u, v)
        a = em.opposite(f1, u, v)
        b = em.opposite(f2, u, v)
        vu, vv, va, vb = val(u), val(v), val(a), val(b)
        if vu <= 3 or vv <= 3:
            continue
        before = abs(vu - 6) + abs(vv - 6) + abs(va - 6) + abs(vb - 6)
        after = abs(vu - 7) + abs(vv - 7) + abs(va - 5) + abs(vb - 5)
        if after < before and em.flip_ok(u, v):
            em.flip(u, v)
            valence[u], valence[v], valence[a], valence[b] = vu - 1, vv - 1, va + 1, vb + 1


def _relax_and_project(em, index, lam=1.0):
    V, F, ids = em.arrays()
    A = _adjacency(len(V), F)
    n = compute_vertex_normals(TriangleMesh(V, F)).normals
    d = _umbrella(V, A)
    d -= np.einsum("ij,ij->i", d, n)[:, None] * n
    V = V + lam * d
    em.set_positions(ids, index.query(V).point)


def remesh(mesh: TriangleMesh, target_edge_length, iterations=3) -> TriangleMesh:
    """Isotropic remeshing toward ``target_edge_length``, projected onto the input mesh.

    Each pass splits edges longer than 4/3 of the target, collapses edges
    shorter than 4/5 of it, flips edges toward valence 6 and relaxes
    vertices tangentially before projecting them to the nearest point of
    the input surface.
    """
    L = float(target_edge_length)
    if not L > 0:
        raise InvalidArgumentError("target edge length must be > 0")
    iterations = int(iterations)
    if iterations < 0:
        raise InvalidArgumentError("iterations must be >= 0")
    _check_closed_manifold(mesh)
    if iterations == 0:
        return mesh.copy()
    index = SurfaceQueryIndex(mesh)
    em = EditMesh(mesh.vertices, mesh.faces)
    lo, hi = 0.8 * L, 4.0 / 3.0 * L
    for _ in range(iterations):
        _split_long(em, hi)
        _collapse_short(em, lo, hi)
        _equalize_valence(em)
        _relax_and_project(em, index)
    V, F, _ = em.arrays()
    return compute_vertex_normals(TriangleMesh(V, F))


# ------------------------------------------------------------- spec grammar


def _floats(text, n=None, what="argument"):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise InvalidArgumentError(f"bad {what} {text!r}") from exc
    if n is not None and len(vals) != n:
        raise InvalidArgumentError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    return vals


@dataclass(frozen=True)
class AttackSpec:
    """A parsed attack; ``args`` keeps the raw string fields after the name."""

    name: str
    args: tuple = ()

    NAMES = ("gaussian", "rotate", "scale", "translate", "combined", "quantize",
             "simplify", "smooth", "remesh", "none")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise InvalidArgumentError(f"unknown attack {self.name!r}; expected one of {self.NAMES}")

    def __str__(self):
        return ":".join((self.name,) + tuple(self.args))

    def apply(self, mesh: TriangleMesh, seed=0) -> TriangleMesh:
        a = self.args
        need = {"gaussian": 1, "scale": 1, "translate": 1, "quantize": 1, "simplify": 1,
                "none": 0}.get(self.name)
        # rotate, combined, smooth and remesh take one required and one optional field
        lo, hi = (1, 2) if need is None else (need, need)
        if not lo <= len(a) <= hi:
            raise InvalidArgumentError(f"wrong number of arguments for {self}")
        if self.name == "none":
            return mesh.copy()
        if self.name == "gaussian":
            return gaussian_noise(mesh, _floats(a[0], 1)[0], seed)
        if self.name == "rotate":
            axis = _floats(a[1], 3, "axis") if len(a) > 1 else None
            return rotate(mesh, _floats(a[0], 1)[0], axis, seed)
        if self.name == "scale":
            return scale(mesh, _floats(a[0], 1)[0])
        if self.name == "translate":
            return translate(mesh, _floats(a[0], 3, "translation"))
        if self.name == "combined":
            ang, fac = _floats(a[0], 2, "angle,scale")
            t = _floats(a[1], 3, "translation") if len(a) > 1 else (0.0, 0.0, 0.0)
            return combined(mesh, ang, fac, t, seed)
        if self.name == "quantize":
            return quantize(mesh, int(_floats(a[0], 1)[0]))
        if self.name == "simplify":
            return simplify(mesh, _floats(a[0], 1)[0])
        if self.name == "smooth":
            lam = _floats(a[1], 1)[0] if len(a) > 1 else 0.5
            return smooth(mesh, int(_floats(a[0], 1)[0]), lam)
        # remesh
        L = mesh.mean_edge_length() if a[0] == "mean" else _floats(a[0], 1)[0]
        its = int(_floats(a[1], 1)[0]) if len(a) > 1 else 3
        return remesh(mesh, L, its)


def parse_attack(text: str) -> AttackSpec:
    parts = text.strip().split(":")
    if not parts[0]:
        raise InvalidArgumentError(f"empty attack spec {text!r}")
    return AttackSpec(parts[0].lower(), tuple(parts[1:]))


def apply_attack(mesh: TriangleMesh, spec, seed=0) -> TriangleMesh:
    if isinstance(spec, str):
        spec = parse_attack(spec)
    return spec.apply(mesh, seed)
