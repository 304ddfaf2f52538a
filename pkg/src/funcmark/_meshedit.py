"""Mutable triangle mesh supporting local edge operations.

Used by the simplification and remeshing attacks. Faces keep their
counter-clockwise orientation through every operation. Deleted faces are
``None``; deleted vertices keep an empty face set.
"""

from __future__ import annotations

import numpy as np


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _normal(p0, p1, p2):
    return _cross(_sub(p1, p0), _sub(p2, p0))


def _dist2(a, b):
    d = _sub(a, b)
    return _dot(d, d)


class EditMesh:
    def __init__(self, vertices, faces):
        self.pos = [tuple(v) for v in np.asarray(vertices, dtype=np.float64).tolist()]
        self.faces = [list(f) for f in np.asarray(faces, dtype=np.int64).tolist()]
        self.vf = [set() for _ in self.pos]
        for fi, f in enumerate(self.faces):
            for v in f:
                self.vf[v].add(fi)
        self.n_alive = sum(1 for s in self.vf if s)

    # ---------------------------------------------------------- queries

    def alive(self, v):
        return bool(self.vf[v])

    def neighbors(self, v):
        out = set()
        for f in self.vf[v]:
            out.update(self.faces[f])
        out.discard(v)
        return out

    def edge_faces(self, u, v):
        return self.vf[u] & self.vf[v]

    def opposite(self, f, u, v):
        for w in self.faces[f]:
            if w != u and w != v:
                return w
        raise ValueError("face does not contain the edge")

    def edges(self):
        """Unique undirected edges as an ``(e, 2)`` int array."""
        F = np.array([f for f in self.faces if f is not None], dtype=np.int64).reshape(-1, 3)
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_lengths(self, E):
        P = np.asarray(self.pos)
        return np.linalg.norm(P[E[:, 0]] - P[E[:, 1]], axis=1)

    def link_ok(self, u, v):
        """Collapse of ``(u, v)`` keeps a closed 2-manifold."""
        if len(self.edge_faces(u, v)) != 2:
            return False
        common = self.neighbors(u) & self.neighbors(v)
        if len(common) != 2:
            return False
        # never shrink below a tetrahedron
        return len(self.neighbors(u) | self.neighbors(v)) > 4

    def collapse_flips(self, u, v, p, min_cos=0.2):
        """True when moving ``u`` and ``v`` to ``p`` would fold a surviving face."""
        shared = self.edge_faces(u, v)
        for f in (self.vf[u] | self.vf[v]) - shared:
            corners = [self.pos[w] for w in self.faces[f]]
            before = _normal(*corners)
            moved = [p if w in (u, v) else self.pos[w] for w in self.faces[f]]
            after = _normal(*moved)
            nb, na = _dot(before, before), _dot(after, after)
            if na <= 1e-30:
                return True
            if _dot(before, after) <= min_cos * (nb * na) ** 0.5:
                return True
        return False

    # ---------------------------------------------------------- edits

    def collapse(self, u, v, p):
        """Merge ``u`` into ``v`` and place ``v`` at ``p``."""
        for f in list(self.edge_faces(u, v)):
            for w in self.faces[f]:
                self.vf[w].discard(f)
            self.faces[f] = None
        for f in self.vf[u]:
            face = self.faces[f]
            face[face.index(u)] = v
            self.vf[v].add(f)
        self.vf[u] = set()
        self.pos[v] = p
        self.n_alive -= 1

    def split(self, u, v):
        """Insert the midpoint of ``(u, v)``; returns the new vertex id."""
        m = len(self.pos)
        pu, pv = self.pos[u], self.pos[v]
        self.pos.append(((pu[0] + pv[0]) * 0.5, (pu[1] + pv[1]) * 0.5, (pu[2] + pv[2]) * 0.5))
        self.vf.append(set())
        self.n_alive += 1
        for f in list(self.edge_faces(u, v)):
            face = self.faces[f]
            k = face.index(u)
            if face[(k + 1) % 3] == v:
                x, y = u, v
            else:
                x, y = v, u
                k = face.index(v)
            w = face[(k + 2) % 3]
            # (x, y, w) -> (x, m, w) and (m, y, w)
            self.faces[f] = [x, m, w]
            self.vf[y].discard(f)
            self.vf[m].add(f)
            g = len(self.faces)
            self.faces.append([m, y, w])
            for z in (m, y, w):
                self.vf[z].add(g)
        return m

    def flip(self, u, v):
        """Replace edge ``(u, v)`` by the edge joining its two opposite vertices."""
        f1, f2 = self._oriented_pair(u, v)
        a = self.opposite(f1, u, v)
        b = self.opposite(f2, u, v)
        # f1 = (u, v, a), f2 = (v, u, b) -> (u, b, a), (b, v, a)
        self.faces[f1] = [u, b, a]
        self.faces[f2] = [b, v, a]
        self.vf[v].discard(f1)
        self.vf[u].discard(f2)
        self.vf[b].add(f1)
        self.vf[a].add(f2)

    def _oriented_pair(self, u, v):
        f1, f2 = self.edge_faces(u, v)
        face = self.faces[f1]
        k = face.index(u)
        if face[(k + 1) % 3] != v:
            f1, f2 = f2, f1
        return f1, f2

    def flip_ok(self, u, v, min_cos=0.2):
        if len(self.edge_faces(u, v)) != 2:
            return False
        f1, f2 = self._oriented_pair(u, v)
        a = self.opposite(f1, u, v)
        b = self.opposite(f2, u, v)
        if a == b or b in self.neighbors(a):
            return False
        P = self.pos
        n1 = _normal(P[u], P[b], P[a])
        n2 = _normal(P[b], P[v], P[a])
        ref = _normal(P[u], P[v], P[a])
        ref2 = _normal(P[v], P[u], P[b])
        for n in (n1, n2):
            nn = _dot(n, n)
            if nn <= 1e-30:
                return False
            for r in (ref, ref2):
                if _dot(n, r) <= min_cos * (nn * _dot(r, r)) ** 0.5:
                    return False
        return True

    # ---------------------------------------------------------- export

    def arrays(self):
        """``(vertices, faces, ids)`` with dead entries dropped; ``ids`` maps back."""
        ids = np.array([v for v in range(len(self.pos)) if self.vf[v]], dtype=np.int64)
        remap = np.full(len(self.pos), -1, dtype=np.int64)
        remap[ids] = np.arange(len(ids))
        F = np.array([f for f in self.faces if f is not None], dtype=np.int64).reshape(-1, 3)
        V = np.asarray(self.pos, dtype=np.float64)[ids]
        return V, remap[F], ids

    def set_positions(self, ids, V):
        for i, p in zip(ids.tolist(), V.tolist()):
            self.pos[i] = tuple(p)
