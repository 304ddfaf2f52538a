import numpy as np
import pytest

from funcmark.errors import EmptySurfaceError, InvalidArgumentError, InvalidMeshError, SamplingExhaustedError
from funcmark.field import Sphere, Torus, blob
from funcmark.surface import (
    CORNER_OFFSETS,
    EDGE_CORNERS,
    TriangleMesh,
    compute_vertex_normals,
    dual_contouring,
    marching_cubes,
    sample_surface,
)
from funcmark._mc_tables import TRI_TABLE


def test_table_shape():
    assert len(TRI_TABLE) == 256
    assert TRI_TABLE[0] == () and TRI_TABLE[255] == ()
    assert all(len(r) % 3 == 0 and all(0 <= e < 12 for e in r) for r in TRI_TABLE)
    # each edge joins two corners one step apart along a single axis
    d = np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 0]] - CORNER_OFFSETS[EDGE_CORNERS[:, 1]]).sum(axis=1)
    assert np.all(d == 1)


def test_table_edges_cross_sign_change():
    """Every edge a case uses separates an inside corner from an outside one."""
    for case, row in enumerate(TRI_TABLE):
        inside = [(case >> c) & 1 for c in range(8)]
        for e in row:
            a, b = EDGE_CORNERS[e]
            assert inside[a] != inside[b]


def test_mc_sphere_64():
    m = marching_cubes(Sphere(), 64)
    assert np.max(np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5)) <= 1e-2
    assert m.euler_characteristic() == 2
    assert m.is_watertight()
    assert m.signed_volume() == pytest.approx(4 / 3 * np.pi * 0.125, rel=1e-2)


@pytest.mark.parametrize("field,chi", [(Torus(), 0), (blob(), 2)], ids=["torus", "blob"])
def test_mc_topology(field, chi):
    m = marching_cubes(field, 48)
    assert m.is_watertight()
    assert m.euler_characteristic() == chi
    assert m.signed_volume() > 0


def test_mc_normals_outward_and_radial():
    m = marching_cubes(Sphere(), 64)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    fn = m.face_normals()
    c = m.corners().mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", fn, c) > 0)
    assert np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", m.normals, radial), -1, 1))).max() < 1e-4


def test_area_weighted_normals_radial():
    # the worst vertex at 64 sits just above 3 degrees, at 128 it is about 1.5
    m = marching_cubes(Sphere(), 128, normals=False)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    area = compute_vertex_normals(m).normals
    assert np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", area, radial), -1, 1))).max() <= 3


def test_mc_error_decreases_with_resolution():
    errs = []
    for r in (32, 64, 128, 256):
        m = marching_cubes(Sphere(), r, normals=False)
        errs.append(np.max(np.abs(Sphere().eval(m.vertices))))
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_mc_empty():
    with pytest.raises(EmptySurfaceError):
        marching_cubes(Sphere(0.3, (5, 5, 5)), 16)


def test_mc_resolution_guard():
    with pytest.raises(InvalidArgumentError):
        marching_cubes(Sphere(), 4)


def test_mc_thread_independent():
    from funcmark._parallel import set_threads
    a = marching_cubes(blob(), 40)
    set_threads(3)
    try:
        b = marching_cubes(blob(), 40)
    finally:
        set_threads(1)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_dc_sphere():
    m = dual_contouring(Sphere(), 64)
    assert np.max(np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5)) <= 2e-2
    assert m.is_watertight()
    assert m.euler_characteristic() == 2
    assert m.signed_volume() > 0


def test_dc_empty():
    with pytest.raises(EmptySurfaceError):
        dual_contouring(Sphere(0.3, (5, 5, 5)), 16)


def test_sample_sphere():
    s = sample_surface(Sphere(), 2000, seed=1)
    assert s.count == 2000
    assert np.max(np.abs(np.linalg.norm(s.points, axis=1) - 0.5)) <= 1e-6


def test_sample_reproducible():
    a = sample_surface(blob(), 500, seed=9).points
    b = sample_surface(blob(), 500, seed=9).points
    assert np.array_equal(a, b)


def test_sample_roughly_area_uniform():
    # an equal-area split of the sphere: upper cap z > 0 holds half the area
    p = sample_surface(Sphere(), 20000, seed=3).points
    assert abs(np.mean(p[:, 2] > 0) - 0.5) < 0.02
    assert abs(np.mean(p[:, 2] > 0.25) - 0.25) < 0.02


def test_sample_empty_and_exhausted():
    assert sample_surface(Sphere(), 0).count == 0
    with pytest.raises(SamplingExhaustedError):
        sample_surface(Sphere(0.3, (5, 5, 5)), 10, max_rounds=3)


def test_sample_grid_field(wm_sphere_grid64):
    G, _ = wm_sphere_grid64
    s = sample_surface(G, 300, seed=2)
    assert np.max(np.abs(G.eval(s.points))) <= 1e-6


def test_mesh_validation():
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])
    with pytest.raises(InvalidMeshError):
        TriangleMesh(np.eye(3), [[0, 1, 2]], normals=np.ones((3, 3)))


def test_vertex_normals_simple():
    tri = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
    assert np.allclose(compute_vertex_normals(tri).normals, [0, 0, 1])
    xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    V = np.stack([xs.ravel(), ys.ravel(), np.zeros(16)], axis=1)
    F = []
    for i in range(3):
        for j in range(3):
            a, b, c, d = i * 4 + j, (i + 1) * 4 + j, (i + 1) * 4 + j + 1, i * 4 + j + 1
            F += [[a, b, c], [a, c, d]]
    n = compute_vertex_normals(TriangleMesh(V, F)).normals
    assert np.allclose(n, n[0]) and np.allclose(np.abs(n[0]), [0, 0, 1])


def test_mesh_sample_on_faces():
    m = marching_cubes(Sphere(), 32)
    pts, fi, bary = m.sample(1000, np.random.default_rng(0))
    assert np.all(bary >= -1e-12) and np.allclose(bary.sum(axis=1), 1)
    c = m.corners()[fi]
    assert np.allclose(np.einsum("ni,nij->nj", bary, c), pts)
