import numpy as np
import pytest

from conftest import central_diff, near_surface
from funcmark.embed import (
    NewtonConfig,
    WatermarkedField,
    bake_watermarked,
    check_injectivity,
    deform,
    deform_jacobian,
    injectivity_bound,
    inv3,
    invert_deform,
    wm_eval,
    wm_gradient,
)
from funcmark.errors import InvalidArgumentError, NonConvergenceError, UndefinedDirectionError
from funcmark.field import Sphere, Torus, bake_grid, blob
from funcmark.partition import PartitionLayout, partition_of, sph_to_cart, window
from funcmark.surface import sample_surface

N = 32


def center_direction(i, j, r):
    return sph_to_cart((r, (i + 0.5) * np.pi / N, -np.pi + (j + 0.5) * 2 * np.pi / N))


def find_cell(layout, bit):
    g = layout.bit_grid()
    i, j = np.argwhere(g[4:-4] == bit)[0]
    return i + 4, j


def same_cells(P, h, layout):
    """Rows whose finite-difference stencil stays inside one partition."""
    ok = np.ones(len(P), dtype=bool)
    base = partition_of(P, layout)
    for e in np.eye(3):
        for s in (-1, 1):
            q = partition_of(P + s * h * e, layout)
            ok &= (q.i == base.i) & (q.j == base.j)
    return ok


@pytest.mark.parametrize("bit,expected", [(1, 0.501), (0, 0.499)])
def test_deform_sphere_center(layout16, bit, expected):
    i, j = find_cell(layout16, bit)
    y = center_direction(i, j, 0.5)
    x = deform(y, Sphere(), layout16)
    assert np.linalg.norm(x) == pytest.approx(expected, abs=1e-12)


def test_deform_identity_on_boundary(layout16):
    y = sph_to_cart((0.5, 10 * np.pi / N, -np.pi + (7.5) * 2 * np.pi / N))
    assert window(y, layout16) == pytest.approx(0, abs=1e-18)
    assert np.allclose(deform(y, Sphere(), layout16), y, atol=1e-18)


def test_deform_origin(layout16):
    with pytest.raises(UndefinedDirectionError):
        deform([0, 0, 0], Sphere(), layout16)


def test_zero_delta_identity(layout16):
    lay = layout16.with_delta(0.0)
    P = np.random.default_rng(0).uniform(-0.8, 0.8, (50, 3))
    assert np.array_equal(deform(P, blob(), lay), P)
    assert np.array_equal(deform_jacobian(P, blob(), lay), np.broadcast_to(np.eye(3), (50, 3, 3)))
    assert np.array_equal(invert_deform(P, blob(), lay), P)


@pytest.mark.parametrize("field", [Sphere(), Torus(), blob()], ids=["sphere", "torus", "blob"])
def test_jacobian_matches_finite_differences(field, layout16):
    rng = np.random.default_rng(1)
    P = near_surface(field, 150, rng)
    h = 1e-6
    P = P[same_cells(P, h, layout16)][:100]
    J = deform_jacobian(P, field, layout16)
    fd = central_diff(lambda Q: deform(Q, field, layout16), P, h)
    rel = np.linalg.norm(J - fd, axis=(1, 2)) / np.linalg.norm(fd, axis=(1, 2))
    assert len(P) >= 80
    assert rel.max() <= 1e-4


def test_jacobian_is_numerator_layout(layout16):
    """Row i holds the derivatives of output i: J @ dy is the first-order change."""
    F = blob()
    y = near_surface(F, 1, np.random.default_rng(2))
    dy = np.array([1e-7, -2e-7, 1.5e-7])
    J = deform_jacobian(y[0], F, layout16)
    dx = deform(y[0] + dy, F, layout16) - deform(y[0], F, layout16)
    assert np.allclose(J @ dy, dx, atol=1e-12)


@pytest.mark.parametrize("field", [Sphere(), Torus(), blob()], ids=["sphere", "torus", "blob"])
def test_round_trip(field, layout16):
    y = sample_surface(field, 1000, seed=4).points
    x = deform(y, field, layout16)
    back = invert_deform(x, field, layout16)
    assert np.max(np.linalg.norm(back - y, axis=1)) <= 1e-6


def test_round_trip_injective_on_band(layout16):
    F = Sphere()
    y = near_surface(F, 2000, np.random.default_rng(5))
    x = deform(y, F, layout16)
    from scipy.spatial import cKDTree
    assert not cKDTree(x).query_pairs(1e-9)


def test_restarts_rescue_a_bad_first_start(layout16):
    F = Sphere()
    lay = layout16.with_delta(0.01)
    y = sample_surface(F, 20, seed=6).points
    x = deform(y, F, lay)
    inv = invert_deform(x, F, lay, NewtonConfig(max_iter=1, batch_size=100), full=True)
    assert inv.converged.all() or inv.restarted.any()


def test_nonconvergence_reports_residual(layout16):
    F = Sphere()
    lay = layout16.with_delta(0.01)
    x = deform(sample_surface(F, 5, seed=7).points, F, lay)
    with pytest.raises(NonConvergenceError) as err:
        invert_deform(x, F, lay, NewtonConfig(max_iter=1, batch_size=1, tol=1e-300))
    assert err.value.residual is not None


def test_newton_deterministic(layout16):
    F = blob()
    x = near_surface(F, 200, np.random.default_rng(8))
    cfg = NewtonConfig(seed=11)
    assert np.array_equal(invert_deform(x, F, layout16, cfg), invert_deform(x, F, layout16, cfg))


def test_inv3():
    A = np.random.default_rng(9).normal(size=(20, 3, 3))
    inv, det = inv3(A)
    assert np.allclose(inv @ A, np.eye(3), atol=1e-9)
    assert np.allclose(det, np.linalg.det(A))


@pytest.mark.parametrize("field", [Sphere(), blob()], ids=["sphere", "blob"])
def test_wm_gradient_matches_finite_differences(field, layout16):
    wf = WatermarkedField(field, layout16)
    rng = np.random.default_rng(10)
    y = near_surface(field, 150, rng)
    X = deform(y, field, layout16)
    h = 1e-6
    X = X[same_cells(X, 2 * h, layout16)][:100]
    g = wf.gradient(X)
    fd = central_diff(wf.eval, X, h)
    rel = np.linalg.norm(g - fd, axis=1) / np.linalg.norm(fd, axis=1)
    assert rel.max() <= 1e-3


def test_wm_zero_set_is_deformed_surface(layout16):
    F = blob()
    wf = WatermarkedField(F, layout16)
    y = sample_surface(F, 300, seed=12).points
    assert np.max(np.abs(wf.eval(deform(y, F, layout16)))) <= 1e-6


def test_wm_sphere_center_direction(layout16):
    wf = WatermarkedField(Sphere(), layout16)
    i, j = find_cell(layout16, 1)
    x = center_direction(i, j, 0.501)
    assert abs(wm_eval(x, wf)) <= 1e-9
    g = wm_gradient(x, wf)
    assert np.allclose(np.cross(g, x / np.linalg.norm(x)), 0, atol=1e-9)


def test_wm_cell_corner_equals_base(layout16):
    # both C and its gradient vanish at a cell corner, so J_D = I there
    wf = WatermarkedField(Sphere(), layout16)
    x = sph_to_cart((0.47, 9 * np.pi / N, -np.pi + 3 * 2 * np.pi / N))
    assert np.allclose(deform_jacobian(x, Sphere(), layout16), np.eye(3), atol=1e-15)
    assert wm_eval(x, wf) == pytest.approx(Sphere().eval(x), abs=1e-15)
    assert np.allclose(wm_gradient(x, wf), Sphere().gradient(x), atol=1e-12)


def test_wm_cell_edge_one_sided(layout16):
    # on a cell edge C = 0 but grad C does not, and G has a crease: the
    # returned gradient is the one-sided derivative from the point's own cell
    wf = WatermarkedField(Sphere(), layout16)
    theta = 9 * np.pi / N
    x = sph_to_cart((0.47, theta, -np.pi + 3.3 * 2 * np.pi / N))
    assert wm_eval(x, wf) == pytest.approx(Sphere().eval(x), abs=1e-15)
    assert partition_of(x, layout16).i == 9
    e_theta = sph_to_cart((1.0, theta + np.pi / 2, -np.pi + 3.3 * 2 * np.pi / N))
    # h well above the Newton stopping tolerance (10 * tau)
    h = 1e-4
    one_sided = (wf.eval(x + h * e_theta) - wf.eval(x)) / h
    assert abs(one_sided) > 0.01
    assert wm_gradient(x, wf) @ e_theta == pytest.approx(one_sided, abs=2e-3)


def test_wm_gradient_near_normal(layout16):
    F = blob()
    wf = WatermarkedField(F, layout16)
    x = deform(sample_surface(F, 200, seed=13).points, F, layout16)
    g = wf.gradient(x)
    fd = central_diff(wf.eval, x, 1e-6)
    cos = np.einsum("ij,ij->i", g, fd) / np.linalg.norm(g, axis=1) / np.linalg.norm(fd, axis=1)
    assert np.all(np.linalg.norm(g, axis=1) > 0)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() <= 5


def test_sign_correctness(layout16):
    F = Sphere()
    y = sample_surface(F, 2000, seed=14).points
    c = window(y, layout16)
    y = y[c > 0]
    bits = layout16.bit_grid()[tuple(partition_of(y, layout16))]
    fx = F.eval(deform(y, F, layout16))
    assert np.all((fx > 0) == (bits == 1))


def test_wm_hessian_symmetric(layout16):
    wf = WatermarkedField(blob(), layout16)
    H = wf.hessian(np.array([[0.3, 0.2, 0.35]]))
    assert np.allclose(H, np.swapaxes(H, 1, 2))


def test_bake_zero_delta_matches_plain_bake(layout16):
    G, rep = bake_watermarked(WatermarkedField(Sphere(), layout16.with_delta(0.0)), 32)
    assert np.array_equal(G.values, bake_grid(Sphere(), 32).values)
    assert rep.newton_failures == 0


def test_bake_report_sphere(wm_sphere_grid64):
    _, rep = wm_sphere_grid64
    assert rep.failure_fraction <= 1e-4
    assert rep.nodes == 64 ** 3


def test_injectivity_guard(layout16):
    bound = injectivity_bound(layout16, 0.5)
    assert bound == pytest.approx(0.25 * np.pi / 32 * 0.5)
    check_injectivity(layout16, 0.5)
    with pytest.raises(InvalidArgumentError):
        check_injectivity(layout16.with_delta(2 * bound), 0.5)


def test_newton_config_validation():
    with pytest.raises(InvalidArgumentError):
        NewtonConfig(tol=0)
    with pytest.raises(InvalidArgumentError):
        NewtonConfig(max_iter=0)
    assert NewtonConfig(batch_size=5, seed=1).restarts().shape == (4, 3)
