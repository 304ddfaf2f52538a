"""Reproducible evaluation sweeps written as CSV tables plus a JSON report.

A :class:`BenchScenario` fixes the shape, layout, extraction settings,
attack list, detection settings and seed. :func:`run_bench` writes

* ``accuracy_resolution.csv``: accuracy by extraction resolution and message length
* ``detection.csv``: detection recall, false-positive rate and precision by sample count and strength
* ``accuracy_delta.csv``: accuracy by strength
* ``accuracy_isosurfacer.csv``: marching cubes against dual contouring
* ``accuracy_attack.csv``: accuracy after each attack (aligned first for rigid ones)
* ``zcurve.csv``: mean z-score by sample count
* ``report.json``: every table, the scenario and the tool version

Repeated runs with the same scenario produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .attack import parse_attack
from .embed import WatermarkedField, bake_watermarked, deform
from .errors import AlignmentFailedError, FuncmarkError
from .field import ScalarField
from .io import parse_primitive
from .partition import PartitionLayout
from .surface import dual_contouring, marching_cubes, sample_surface
from .verify import align, decode, detect

log = logging.getLogger(__name__)

RIGID = ("rotate", "scale", "translate", "combined")


@dataclass
class BenchScenario:
    shape: str = "sphere"
    n_s: int = 32
    delta: float = 0.001
    message_bits: int = 16
    bake_dims: int = 64
    resolutions: list = dc_field(default_factory=lambda: [32, 64, 128])
    message_lengths: list = dc_field(default_factory=lambda: [16, 32, 64])
    deltas: list = dc_field(default_factory=lambda: [0.0005, 0.001, 0.002])
    isosurfacers: list = dc_field(default_factory=lambda: ["mc", "dc"])
    attacks: list = dc_field(default_factory=lambda: [
        "none", "gaussian:0.001", "gaussian:0.01", "quantize:16", "quantize:8",
        "smooth:1", "smooth:3", "simplify:0.3", "rotate:90", "scale:1.2",
        "translate:0.05,0,0", "combined:45,0.9:0.05,0,0.02", "remesh:mean:1"])
    attack_resolution: int = 128
    detection_nv: list = dc_field(default_factory=lambda: [10, 50, 100])
    detection_deltas: list = dc_field(default_factory=lambda: [0.0005, 0.001])
    zcurve_nv: list = dc_field(default_factory=lambda: [10, 50, 100, 1000])
    alpha: float = 0.001
    trials: int = 20
    seed: int = 0

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def layout(self, bits=None, delta=None):
        return PartitionLayout.random(bits or self.message_bits, seed=self.seed,
                                      n_s=self.n_s, delta=self.delta if delta is None else delta)


def null_points(base: ScalarField, n_s, delta, n, seed):
    """Surface points of a shape watermarked under an unrelated key.

    Every partition gets its own independent random bit, so tags against
    any claimed layout are fair coin flips; the points are ``F``-surface
    samples pushed through the deformation of that unrelated key.
    """
    rng = np.random.default_rng(seed)
    key = PartitionLayout(tuple(rng.integers(0, 2, n_s * n_s).tolist()), n_s, delta)
    y = sample_surface(base, n, seed=int(rng.integers(2**31)), tol=1e-9).points
    return deform(y, base, key)


def _accuracy(mesh, base, layout):
    try:
        return decode(mesh, base, layout).bit_accuracy
    except FuncmarkError:
        return float("nan")


class _Context:
    """Caches baked grids per (message length, strength)."""

    def __init__(self, sc: BenchScenario):
        self.sc = sc
        self.base = parse_primitive(sc.shape)
        self._grids = {}

    def grid(self, bits=None, delta=None):
        layout = self.sc.layout(bits, delta)
        key = (layout.n_m, layout.delta)
        if key not in self._grids:
            G, rep = bake_watermarked(WatermarkedField(self.base, layout), self.sc.bake_dims)
            log.info("baked %s: %s", key, rep.to_dict())
            self._grids[key] = G
        return self._grids[key], layout


def table_resolution(ctx):
    rows = []
    for bits in ctx.sc.message_lengths:
        G, layout = ctx.grid(bits=bits)
        for r in ctx.sc.resolutions:
            m = marching_cubes(G, r)
            rows.append({"message_bits": bits, "resolution": r, "n_vertices": m.n_vertices,
                         "bit_accuracy": _accuracy(m, ctx.base, layout)})
    return rows


def table_delta(ctx):
    r = max(ctx.sc.resolutions)
    rows = []
    for d in ctx.sc.deltas:
        G, layout = ctx.grid(delta=d)
        m = marching_cubes(G, r)
        rows.append({"delta": d, "resolution": r, "bit_accuracy": _accuracy(m, ctx.base, layout)})
    return rows


def table_isosurfacer(ctx):
    G, layout = ctx.grid()
    rows = []
    for r in ctx.sc.resolutions:
        for iso in ctx.sc.isosurfacers:
            m = (marching_cubes if iso == "mc" else dual_contouring)(G, r)
            rows.append({"isosurfacer": iso, "resolution": r, "n_vertices": m.n_vertices,
                         "bit_accuracy": _accuracy(m, ctx.base, layout)})
    return rows


def table_attack(ctx):
    G, layout = ctx.grid()
    m = marching_cubes(G, ctx.sc.attack_resolution)
    rows = []
    for k, text in enumerate(ctx.sc.attacks):
        spec = parse_attack(text)
        attacked = spec.apply(m, seed=ctx.sc.seed + k)
        aligned, residual = attacked, float("nan")
        if spec.name in RIGID:
            try:
                res = align(attacked, G, seed=ctx.sc.seed)
                aligned, residual = res.mesh, res.residual
            except AlignmentFailedError as exc:
                residual = exc.residual
        rows.append({"attack": text, "n_vertices": attacked.n_vertices,
                     "align_residual": residual, "bit_accuracy": _accuracy(aligned, ctx.base, layout)})
    return rows


def _pool(field, n, seed):
    return sample_surface(field, n, seed=seed).points


def table_detection(ctx):
    sc = ctx.sc
    rows = []
    nmax = max(sc.detection_nv)
    for d in sc.detection_deltas:
        G, layout = ctx.grid(delta=d)
        rng = np.random.default_rng(sc.seed)
        tp = {nv: 0 for nv in sc.detection_nv}
        fp = {nv: 0 for nv in sc.detection_nv}
        for t in range(sc.trials):
            pos = _pool(G, nmax, int(rng.integers(2**31)))
            neg = null_points(ctx.base, sc.n_s, d, nmax, int(rng.integers(2**31)))
            for nv in sc.detection_nv:
                tp[nv] += detect(pos[:nv], ctx.base, layout, sc.alpha).reject
                fp[nv] += detect(neg[:nv], ctx.base, layout, sc.alpha).reject
        for nv in sc.detection_nv:
            prec = tp[nv] / (tp[nv] + fp[nv]) if tp[nv] + fp[nv] else float("nan")
            rows.append({"delta": d, "n_points": nv, "trials": sc.trials,
                         "recall": tp[nv] / sc.trials, "false_positive_rate": fp[nv] / sc.trials,
                         "precision": prec})
    return rows


def table_zcurve(ctx):
    sc = ctx.sc
    G, layout = ctx.grid()
    rng = np.random.default_rng(sc.seed + 1)
    nmax = max(sc.zcurve_nv)
    z = {nv: [] for nv in sc.zcurve_nv}
    for _ in range(sc.trials):
        pts = _pool(G, nmax, int(rng.integers(2**31)))
        for nv in sc.zcurve_nv:
            z[nv].append(detect(pts[:nv], ctx.base, layout, sc.alpha).z_score)
    return [{"n_points": nv, "trials": sc.trials, "mean_z": float(np.mean(z[nv])),
             "std_z": float(np.std(z[nv]))} for nv in sc.zcurve_nv]


TABLES = {
    "accuracy_resolution": table_resolution,
    "detection": table_detection,
    "accuracy_delta": table_delta,
    "accuracy_isosurfacer": table_isosurfacer,
    "accuracy_attack": table_attack,
    "zcurve": table_zcurve,
}


def _fmt(v):
    if isinstance(v, float):
        return "%.6g" % v
    return v


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def run_bench(scenario: BenchScenario, out_dir, tables=None):
    """Run the selected tables (all by default) and write them under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(scenario)
    results = {}
    for name in tables or TABLES:
        log.info("bench table %s", name)
        rows = TABLES[name](ctx)
        write_csv(out / f"{name}.csv", rows)
        results[name] = [{k: _fmt(v) for k, v in r.items()} for r in rows]
    report = {"tool": "funcmark", "version": __version__, "scenario": asdict(scenario),
              "tables": results}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return results
