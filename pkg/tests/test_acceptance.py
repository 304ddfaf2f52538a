"""Acceptance gate: one printed PASS/FAIL line per criterion.

Every test records its measured numbers through the ``criterion`` fixture
before asserting, so a failing criterion still reports what was observed.
Shared layout: 32 x 32 partitions, strength 0.001, a 16-bit message with a
fixed seed, fields baked at 128^3.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import central_diff, near_surface
from funcmark.attack import apply_attack, random_axis
from funcmark.bench import null_points
from funcmark.embed import WatermarkedField, bake_watermarked, deform, deform_jacobian, invert_deform
from funcmark.errors import AlignmentFailedError
from funcmark.field import Sphere, Torus, blob
from funcmark.metrics import chamfer, p2s
from funcmark.partition import PartitionLayout, partition_of, window
from funcmark.surface import dual_contouring, marching_cubes, sample_surface
from funcmark.verify import SimilarityTransform, align, decode, detect

pytestmark = pytest.mark.slow

N_S, DELTA, BITS, SEED = 32, 0.001, 16, 3
BAKE = 128
Z_CRIT = 3.09
SHAPES = {"sphere": Sphere(), "torus": Torus(), "blob": blob()}


@pytest.fixture(scope="module")
def layout():
    return PartitionLayout.random(BITS, seed=SEED, n_s=N_S, delta=DELTA)


@pytest.fixture(scope="module")
def baked(layout):
    """name -> (G, bake report) for the three shapes."""
    return {name: bake_watermarked(WatermarkedField(F, layout), BAKE) for name, F in SHAPES.items()}


@pytest.fixture(scope="module")
def meshes(baked):
    """name -> {resolution: marching cubes mesh of G}."""
    return {name: {r: marching_cubes(G, r) for r in (64, 256)} for name, (G, _) in baked.items()}


def accuracy(points, name, layout):
    return decode(points, SHAPES[name], layout).bit_accuracy


def same_cell(P, h, layout):
    ok = np.ones(len(P), dtype=bool)
    base = partition_of(P, layout)
    for e in np.eye(3):
        for s in (-1, 1):
            q = partition_of(P + s * h * e, layout)
            ok &= (q.i == base.i) & (q.j == base.j)
    return ok


def test_c1_noiseless_channel(layout, criterion):
    acc = {}
    for name, F in SHAPES.items():
        y = sample_surface(F, 30000, seed=1).points
        y = y[window(y, layout) > 0.1 * DELTA]
        acc[name] = accuracy(deform(y, F, layout), name, layout)
    ok = all(a == 1.0 for a in acc.values())
    criterion(1, ok, "noiseless bit accuracy " + ", ".join(f"{k}={v:.4f}" for k, v in acc.items())
              + " (need exactly 1.0)")
    assert ok


def test_c2_end_to_end(baked, meshes, layout, criterion):
    acc = {name: {r: accuracy(m, name, layout) for r, m in by_r.items()} for name, by_r in meshes.items()}
    fails = sum(rep.newton_failures for _, rep in baked.values())
    each = all(a[256] >= 0.93 for a in acc.values())
    # the trend is judged on the mean over shapes; a shape already at 1.0 can
    # not rise, so per shape only "not higher at 64" is required
    mean64 = np.mean([a[64] for a in acc.values()])
    mean256 = np.mean([a[256] for a in acc.values()])
    trend = mean64 < mean256 and all(a[64] <= a[256] for a in acc.values())
    detail = ", ".join(f"{k} 64:{v[64]:.4f} 256:{v[256]:.4f}" for k, v in acc.items())
    ok = criterion(2, each and trend, f"{detail}; mean 64:{mean64:.4f} < 256:{mean256:.4f}; "
                   f"need each >= 0.93 at 256; bake Newton failures {fails}")
    assert ok


def _reject_rate(G, layout, trials, n, seed):
    hits = 0
    for t in range(trials):
        pts = sample_surface(G, n, seed=seed + t).points
        hits += detect(pts, SHAPES["sphere"], layout).z_score > Z_CRIT
    return hits


def test_c3_detection(baked, layout, criterion):
    G = baked["sphere"][0]
    hits = _reject_rate(G, layout, 100, 50, 1000)
    weak = layout.with_delta(0.0005)
    G_weak, _ = bake_watermarked(WatermarkedField(SHAPES["sphere"], weak), BAKE)
    weak_hits = _reject_rate(G_weak, weak, 100, 50, 2000)
    ok = hits >= 95 and 0.45 <= weak_hits / 100 <= 0.85
    criterion(3, ok, f"sphere, 50 points: delta=0.001 rejects {hits}/100 (need >= 95); "
                     f"delta=0.0005 rejects {weak_hits}/100 (need rate in [0.45, 0.85])")
    assert ok


def test_c4_calibration(layout, criterion):
    F = SHAPES["sphere"]
    rejections = sum(detect(null_points(F, N_S, DELTA, 50, seed=s), F, layout).z_score > Z_CRIT
                     for s in range(1000))
    # diagnostic only: points on the exact zero set of F all have |F| below the
    # tag threshold, so they tag 0 and match whatever bit-0 partitions hold
    degenerate = sum(detect(sample_surface(F, 50, seed=s).points, F,
                            PartitionLayout.random(BITS, seed=10000 + s)).z_score > Z_CRIT
                     for s in range(1000))
    ok = rejections <= 5
    criterion(4, ok, f"null trials rejecting H0: {rejections}/1000 (need <= 5); "
                     "null = surface under an independent per-partition key; "
                     f"diagnostic: exact zero-set samples of F vs random layouts reject {degenerate}/1000")
    assert ok


def test_c5_newton_accuracy(layout, criterion):
    mse = {}
    for name, F in SHAPES.items():
        y = near_surface(F, 10000, np.random.default_rng(5))
        back = invert_deform(deform(y, F, layout), F, layout)
        mse[name] = float(np.mean(np.sum((back - y) ** 2, axis=1)))
    ok = max(mse.values()) <= 1e-12
    criterion(5, ok, "round-trip MSE " + ", ".join(f"{k}={v:.2e}" for k, v in mse.items()) + " (need <= 1e-12)")
    assert ok


def test_c6_analytic_gradients(layout, criterion):
    h = 1e-6
    worst_g, worst_j, used = 0.0, 0.0, []
    for name, F in SHAPES.items():
        wf = WatermarkedField(F, layout)
        rng = np.random.default_rng(6)
        # stencils that straddle a cell edge see the crease of G; keep one cell
        y = near_surface(F, 200, rng)
        y = y[same_cell(y, h, layout)][:100]
        J = deform_jacobian(y, F, layout)
        fd = central_diff(lambda Q: deform(Q, F, layout), y, h)
        worst_j = max(worst_j, float(np.max(np.linalg.norm(J - fd, axis=(1, 2)) / np.linalg.norm(fd, axis=(1, 2)))))
        x = deform(near_surface(F, 200, rng), F, layout)
        x = x[same_cell(x, 2 * h, layout)][:100]
        g = wf.gradient(x)
        fd = central_diff(wf.eval, x, h)
        worst_g = max(worst_g, float(np.max(np.linalg.norm(g - fd, axis=1) / np.linalg.norm(fd, axis=1))))
        used += [len(y), len(x)]
    ok = worst_g <= 1e-3 and worst_j <= 1e-3 and min(used) == 100
    criterion(6, ok, f"max relative error: gradient of G {worst_g:.2e}, Jacobian of D {worst_j:.2e} "
                     f"(need <= 1e-3, 100 points per shape)")
    assert ok


def test_c7_robustness(meshes, layout, criterion):
    m = meshes["sphere"][256]
    base = accuracy(m, "sphere", layout)
    got = {s: accuracy(apply_attack(m, s, seed=1), "sphere", layout)
           for s in ("gaussian:0.001", "quantize:16", "smooth:1", "simplify:0.3", "remesh:mean",
                     "gaussian:0.01", "quantize:8")}
    checks = {
        "gaussian:0.001": base - got["gaussian:0.001"] <= 0.01,
        "quantize:16": got["quantize:16"] >= 0.90,
        "smooth:1": got["smooth:1"] >= 0.90,
        "simplify:0.3": got["simplify:0.3"] >= 0.90,
        "remesh:mean": got["remesh:mean"] >= 0.88,
        "gaussian:0.01": got["gaussian:0.01"] <= 0.75,
        "quantize:8": got["quantize:8"] <= 0.75,
    }
    ok = all(checks.values())
    need = {"gaussian:0.001": "drop<=0.01", "gaussian:0.01": "<=0.75", "quantize:8": "<=0.75",
            "remesh:mean": ">=0.88"}
    parts = [f"{s} {got[s]:.4f} [{need.get(s, '>=0.90')}] {'ok' if c else 'MISS'}" for s, c in checks.items()]
    criterion(7, ok, f"sphere mesh-256 base {base:.4f}; " + "; ".join(parts))
    assert ok


def test_c8_alignment(baked, meshes, layout, criterion):
    G = baked["blob"][0]
    m = meshes["blob"][256]
    rng = np.random.default_rng(8)
    acc = []
    for k in range(10):
        rot = Rotation.from_rotvec(rng.uniform(0, np.pi) * random_axis(rng))
        a = float(np.exp(rng.uniform(np.log(0.8), np.log(1.25))))
        t = rng.normal(size=3)
        t *= rng.uniform(0, 0.1) / np.linalg.norm(t)
        suspect = SimilarityTransform.from_rotation(a, rot, t).apply_mesh(m)
        try:
            acc.append(accuracy(align(suspect, G, seed=k).mesh, "blob", layout))
        except AlignmentFailedError:
            acc.append(float("nan"))
    good = sum(a >= 0.80 for a in acc)
    ok = good >= 9
    criterion(8, ok, f"blob mesh-256, random similarity: {good}/10 trials decode >= 0.80 (need >= 9); "
                     "accuracies " + " ".join(f"{a:.3f}" for a in acc))
    assert ok


def test_c9_geometry_budget(baked, meshes, layout, criterion):
    cd, dist = {}, {}
    for name, F in SHAPES.items():
        original = marching_cubes(F, 256)
        cd[name] = chamfer(original, meshes[name][256], n_samples=100000, seed=9)
        pts = sample_surface(baked[name][0], 30000, seed=9).points
        dist[name] = p2s(pts, original)
    ok = max(cd.values()) <= 0.005 and max(dist.values()) <= 3 * DELTA
    criterion(9, ok, "chamfer " + ", ".join(f"{k}={v:.5f}" for k, v in cd.items()) + " (need <= 0.005); p2s "
              + ", ".join(f"{k}={v:.5f}" for k, v in dist.items()) + f" (need <= {3 * DELTA:g})")
    assert ok


def test_c10_isosurfacer(baked, meshes, layout, criterion):
    gap = {}
    for name, (G, _) in baked.items():
        mc = accuracy(meshes[name][256], name, layout)
        dc = accuracy(dual_contouring(G, 256), name, layout)
        gap[name] = (mc, dc)
    ok = all(abs(mc - dc) <= 0.06 for mc, dc in gap.values())
    criterion(10, ok, "resolution 256 MC vs DC " + ", ".join(f"{k} {mc:.4f}/{dc:.4f}" for k, (mc, dc) in gap.items())
              + " (need gap <= 0.06)")
    assert ok


def test_c11_zcurve(baked, layout, criterion):
    G = baked["sphere"][0]
    sizes = (10, 50, 100, 1000, 5000)
    z = {n: [] for n in sizes}
    for t in range(20):
        pts = sample_surface(G, max(sizes), seed=11000 + t).points
        for n in sizes:
            z[n].append(detect(pts[:n], SHAPES["sphere"], layout).z_score)
    means = [float(np.mean(z[n])) for n in sizes]
    ok = all(a < b for a, b in zip(means, means[1:]))
    criterion(11, ok, "mean z over 20 trials " + ", ".join(f"N={n}:{m:.2f}" for n, m in zip(sizes, means))
              + " (need strictly increasing)")
    assert ok
