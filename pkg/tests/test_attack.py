import numpy as np
import pytest
from scipy.spatial import cKDTree

from funcmark.attack import (
    AttackSpec,
    apply_attack,
    combined,
    gaussian_noise,
    parse_attack,
    quantize,
    remesh,
    rotate,
    scale,
    simplify,
    smooth,
    translate,
)
from funcmark.errors import InvalidArgumentError, InvalidMeshError
from funcmark.field import Sphere, blob
from funcmark.surface import TriangleMesh, marching_cubes


@pytest.fixture(scope="module")
def sphere_mesh():
    return marching_cubes(Sphere(), 32)


@pytest.fixture(scope="module")
def blob_mesh():
    return marching_cubes(blob(), 40)


@pytest.mark.parametrize("spec", ["none", "gaussian:0", "rotate:0", "scale:1", "translate:0,0,0",
                                  "combined:0,1", "simplify:0", "smooth:0", "remesh:mean:0"])
def test_zero_parameter_is_identity(sphere_mesh, spec):
    out = apply_attack(sphere_mesh, spec)
    assert np.array_equal(out.faces, sphere_mesh.faces)
    assert np.allclose(out.vertices, sphere_mesh.vertices, atol=1e-15)


def test_quantize_32_bits_within_step(sphere_mesh):
    out = quantize(sphere_mesh, 32)
    lo, hi = sphere_mesh.bounds()
    step = (hi - lo) / (2 ** 32 - 1)
    assert np.all(np.abs(out.vertices - sphere_mesh.vertices) <= step)


def test_quantize_levels(sphere_mesh):
    out = quantize(sphere_mesh, 4)
    assert all(len(np.unique(out.vertices[:, k])) <= 16 for k in range(3))


@pytest.mark.parametrize("spec", ["gaussian:0.01", "rotate:30", "combined:45,0.9:0.05,0,0.02"])
def test_seed_deterministic(sphere_mesh, spec):
    a = apply_attack(sphere_mesh, spec, seed=5).vertices
    b = apply_attack(sphere_mesh, spec, seed=5).vertices
    c = apply_attack(sphere_mesh, spec, seed=6).vertices
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_gaussian_std(sphere_mesh):
    d = gaussian_noise(sphere_mesh, 0.01, seed=1).vertices - sphere_mesh.vertices
    assert d.std() == pytest.approx(0.01, rel=0.05)


def test_similarity_attacks_exact(sphere_mesh):
    v = sphere_mesh.vertices
    assert np.allclose(scale(sphere_mesh, 2).vertices, 2 * v)
    assert np.allclose(translate(sphere_mesh, (0.1, 0, -0.2)).vertices, v + [0.1, 0, -0.2])
    r = rotate(sphere_mesh, 90, (0, 0, 1)).vertices
    assert np.allclose(r, np.c_[-v[:, 1], v[:, 0], v[:, 2]])
    c = combined(sphere_mesh, 90, 2, (1, 0, 0), seed=0)
    assert np.allclose(np.linalg.norm(c.vertices - [1, 0, 0], axis=1), 2 * np.linalg.norm(v, axis=1))


@pytest.mark.parametrize("spec", ["rotate:120", "scale:0.8", "translate:0.1,0.2,0.3",
                                  "combined:60,1.1:0,0,0.1", "quantize:16", "smooth:3",
                                  "simplify:0.5", "remesh:mean:1"])
def test_orientation_preserved(blob_mesh, spec):
    out = apply_attack(blob_mesh, spec, seed=2)
    assert out.signed_volume() > 0
    if out.normals is not None:
        fn = out.face_normals()
        vn = out.normals[out.faces].mean(axis=1)
        assert np.mean(np.einsum("ij,ij->i", fn, vn) > 0) > 0.99


def test_smooth_shrinks_sphere(sphere_mesh):
    r0 = np.linalg.norm(sphere_mesh.vertices, axis=1).mean()
    r1 = np.linalg.norm(smooth(sphere_mesh, 3).vertices, axis=1).mean()
    assert r1 < r0


@pytest.mark.parametrize("fraction", [0.3, 0.9])
def test_simplify_manifold(blob_mesh, fraction):
    out = simplify(blob_mesh, fraction)
    assert out.n_vertices == pytest.approx((1 - fraction) * blob_mesh.n_vertices, abs=2)
    assert out.is_watertight()
    assert out.euler_characteristic() == 2


def test_simplify_keeps_shape(blob_mesh):
    from funcmark.metrics import p2s
    out = simplify(blob_mesh, 0.5)
    pts, _, _ = out.sample(5000, np.random.default_rng(0))
    assert p2s(pts, blob_mesh) <= 2e-3


def test_remesh_moves_vertices(blob_mesh):
    out = remesh(blob_mesh, blob_mesh.mean_edge_length(), 3)
    d, _ = cKDTree(blob_mesh.vertices).query(out.vertices)
    assert np.mean(d < 1e-9) < 0.01
    assert out.is_watertight()
    assert out.euler_characteristic() == 2
    assert out.mean_edge_length() == pytest.approx(blob_mesh.mean_edge_length(), rel=0.25)


def test_remesh_stays_on_input(blob_mesh):
    from funcmark.metrics import p2s
    out = remesh(blob_mesh, blob_mesh.mean_edge_length(), 2)
    assert p2s(out.vertices, blob_mesh) <= 1e-9


def test_remesh_rejects_open_mesh():
    tri = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
    with pytest.raises(InvalidMeshError):
        remesh(tri, 0.1)


def test_remesh_rejects_nonmanifold_edge(sphere_mesh):
    V = np.r_[sphere_mesh.vertices, [[2.0, 2.0, 2.0]]]
    a, b = sphere_mesh.faces[0, :2]
    F = np.r_[sphere_mesh.faces, [[a, b, len(V) - 1]]]
    with pytest.raises(InvalidMeshError):
        remesh(TriangleMesh(V, F), 0.1)


@pytest.mark.parametrize("text", ["", "blur:1", "gaussian", "gaussian:a", "translate:1,2",
                                  "rotate:10:1,0", "combined:10", "smooth:1:0.5:3", "none:1"])
def test_grammar_errors(sphere_mesh, text):
    with pytest.raises(InvalidArgumentError):
        apply_attack(sphere_mesh, text)


def test_grammar_round_trip():
    spec = parse_attack("Combined:45,0.9:0.05,0,0.02")
    assert spec == AttackSpec("combined", ("45,0.9", "0.05,0,0.02"))
    assert str(spec) == "combined:45,0.9:0.05,0,0.02"


@pytest.mark.parametrize("bad", [(quantize, 0), (simplify, 1.0), (simplify, -0.1), (smooth, -1),
                                 (gaussian_noise, -1.0), (scale, 0)])
def test_argument_ranges(sphere_mesh, bad):
    fn, arg = bad
    with pytest.raises(InvalidArgumentError):
        fn(sphere_mesh, arg)


def test_second_remesh_pass_costs_little(wm_sphere_grid64, layout16):
    from funcmark.verify import decode
    G, _ = wm_sphere_grid64
    m = marching_cubes(G, 96)
    L = m.mean_edge_length()
    once = remesh(m, L, 1)
    twice = remesh(once, L, 1)
    a1 = decode(once, Sphere(), layout16).bit_accuracy
    a2 = decode(twice, Sphere(), layout16).bit_accuracy
    assert a1 - a2 <= 0.05
