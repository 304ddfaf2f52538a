import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_diff
from funcmark.errors import InvalidArgumentError, OutOfDomainError
from funcmark.field import (
    GridField,
    SmoothUnion,
    Sphere,
    Torus,
    bake_grid,
    blob,
    eval_field,
    eval_gradient,
    eval_hessian,
)

PRIMITIVES = [Sphere(), Sphere(0.3, (0.1, -0.2, 0.05)), Torus(), Torus(0.4, 0.15, (0.05, 0, 0.1)), blob()]


def off_medial(rng, n):
    P = rng.uniform(-0.9, 0.9, (n, 3))
    return P[np.linalg.norm(P[:, :2], axis=1) > 0.1]


def test_sphere_values():
    s = Sphere(0.5)
    assert eval_field(s, [0, 0, 0.5]) == 0.0
    assert eval_field(s, [0, 0, 0]) == -0.5
    assert np.allclose(eval_gradient(s, [0, 0, 0.7]), [0, 0, 1])
    assert np.allclose(eval_gradient(s, [0.3, 0.4, 0]), [0.6, 0.8, 0])
    assert np.allclose(eval_hessian(s, [0, 0, 1]), np.diag([1.0, 1.0, 0.0]))


def test_sphere_center_convention():
    s = Sphere(0.5)
    assert np.array_equal(s.gradient([0, 0, 0]), [0, 0, 1])
    assert np.array_equal(s.hessian([0, 0, 0]), np.zeros((3, 3)))


def test_torus_on_surface():
    assert abs(eval_field(Torus(0.5, 0.2), [0.5, 0, 0.2])) < 1e-15
    assert abs(eval_field(Torus(0.5, 0.2), [0.7, 0, 0.0])) < 1e-15
    assert np.allclose(Torus().gradient([0.8, 0, 0]), [1, 0, 0])


@pytest.mark.parametrize("field", PRIMITIVES, ids=lambda f: type(f).__name__)
def test_gradient_matches_finite_differences(field):
    P = off_medial(np.random.default_rng(0), 200)
    g = field.gradient(P)
    fd = central_diff(field.eval, P, 1e-4)
    rel = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-12)
    assert rel.max() <= 1e-3


@pytest.mark.parametrize("field", PRIMITIVES, ids=lambda f: type(f).__name__)
def test_hessian_matches_finite_differences(field):
    P = off_medial(np.random.default_rng(1), 100)
    H = field.hessian(P)
    fd = central_diff(field.gradient, P, 1e-4)
    err = np.linalg.norm(H - fd, axis=(1, 2)) / np.maximum(np.linalg.norm(fd, axis=(1, 2)), 1.0)
    assert err.max() <= 1e-2
    assert np.allclose(H, np.swapaxes(H, 1, 2))


def test_torus_hessian_outer_equator():
    t = Torus(0.5, 0.2)
    p = np.array([[0.7, 0.0, 0.0]])
    fd = central_diff(t.gradient, p, 1e-5)
    assert np.allclose(t.hessian(p), fd, atol=1e-6)


@pytest.mark.parametrize("field", [Sphere(), Torus()], ids=["sphere", "torus"])
def test_eikonal(field):
    P = off_medial(np.random.default_rng(2), 1000)
    P = P[np.abs(field.eval(P)) < 0.9 * 0.2]     # stay off the torus core circle
    assert np.max(np.abs(np.linalg.norm(field.gradient(P), axis=1) - 1)) <= 1e-6


def test_smooth_union_bounds():
    a, b = Sphere(0.3, (-0.2, 0, 0)), Sphere(0.3, (0.2, 0, 0))
    u = SmoothUnion((a, b), k=0.05)
    P = np.random.default_rng(3).uniform(-1, 1, (500, 3))
    lo = np.minimum(a.eval(P), b.eval(P))
    assert np.all(u.eval(P) <= lo + 1e-12)
    assert np.all(u.eval(P) >= lo - 0.05 * np.log(2) - 1e-12)


@pytest.mark.parametrize("dims,tol", [(64, 5e-3), (128, 2e-3)])
def test_bake_accuracy(dims, tol):
    # the distance has a cone point at the center; a cubic spline cannot
    # follow it within two cells, so those points are excluded here
    g = bake_grid(Sphere(), dims)
    rng = np.random.default_rng(4)
    P = rng.uniform(-0.9, 0.9, (1000, 3))
    P = P[np.linalg.norm(P, axis=1) > 2 * g.spacing.max()]
    assert np.max(np.abs(g.eval(P) - Sphere().eval(P))) <= tol


def test_bake_error_concentrates_at_center():
    g = bake_grid(Sphere(), 64)
    near = np.array([[0.012, 0.0, 0.0]])
    assert abs(g.eval(near)[0] - Sphere().eval(near)[0]) > 5e-3 * 0.5


def test_bake_deterministic(sphere_grid64):
    again = bake_grid(Sphere(), 64)
    assert np.array_equal(sphere_grid64.values, again.values)


def test_bake_thread_count_independent(sphere_grid64):
    from funcmark._parallel import set_threads
    set_threads(4)
    try:
        again = bake_grid(Sphere(), 64)
    finally:
        set_threads(1)
    assert np.array_equal(sphere_grid64.values, again.values)


def test_grid_interpolates_samples(sphere_grid64):
    g = sphere_grid64
    idx = np.array([[10, 20, 30], [31, 31, 31], [5, 50, 12]])
    P = g.lower + idx * g.spacing
    assert np.allclose(g.eval(P), g.values[tuple(idx.T)], atol=1e-6)


def test_grid_gradient_on_sphere(sphere_grid64):
    assert np.linalg.norm(sphere_grid64.gradient([0, 0, 0.5]) - [0, 0, 1]) <= 1e-2


def test_grid_derivatives_consistent(sphere_grid64):
    P = np.random.default_rng(5).uniform(-0.9, 0.9, (100, 3))
    g = sphere_grid64
    assert np.allclose(g.gradient(P), central_diff(g.eval, P, 1e-5), atol=1e-5)
    assert np.allclose(g.hessian(P), central_diff(g.gradient, P, 1e-5), atol=1e-3)


def test_grid_translation_consistent(sphere_grid64):
    g = sphere_grid64
    shift = np.array([0.25, -0.5, 0.125])
    moved = GridField(g.values, (tuple(g.lower + shift), tuple(g.upper + shift)))
    P = np.random.default_rng(6).uniform(-0.9, 0.9, (200, 3))
    assert np.allclose(moved.eval(P + shift), g.eval(P), rtol=0, atol=1e-12)


def test_grid_out_of_domain(sphere_grid64):
    with pytest.raises(OutOfDomainError):
        sphere_grid64.eval([1.2, 0, 0])


def test_grid_does_not_alias_input():
    vals = np.ones((8, 8, 8), dtype=np.float32)
    g = GridField(vals, ((-1, -1, -1), (1, 1, 1)))
    vals[0, 0, 0] = 5
    assert g.values[0, 0, 0] == 1
    assert vals.flags.writeable


def test_bake_rejects_bad_args():
    with pytest.raises(InvalidArgumentError):
        bake_grid(Sphere(), 4)
    with pytest.raises(InvalidArgumentError):
        bake_grid(Sphere(), 16, ((0, 0, 0), (0, 1, 1)))
    with pytest.raises(InvalidArgumentError):
        bake_grid(Sphere(1.2), 16)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=3, max_size=3))
def test_eval_deterministic_single_vs_batch(p):
    f = blob()
    assert f.eval(p) == f.eval(np.array([p]))[0]
