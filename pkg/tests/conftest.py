import numpy as np
import pytest

from funcmark.embed import WatermarkedField, bake_watermarked
from funcmark.field import Sphere, bake_grid
from funcmark.partition import PartitionLayout


def central_diff(f, P, h):
    """Central differences of a batched scalar or vector function; derivative axis last."""
    cols = []
    for e in np.eye(3):
        cols.append((f(P + h * e) - f(P - h * e)) / (2 * h))
    return np.stack(cols, axis=-1)


def near_surface(field, n, rng, band=0.02):
    from funcmark.surface import sample_surface
    pts = sample_surface(field, n, seed=int(rng.integers(1 << 30))).points
    n_ = field.gradient(pts)
    return pts + rng.uniform(-band, band, (n, 1)) * n_


@pytest.fixture(scope="session")
def layout16():
    return PartitionLayout.random(16, seed=3)


@pytest.fixture(scope="session")
def sphere_grid64():
    return bake_grid(Sphere(), 64)


@pytest.fixture(scope="session")
def wm_sphere_grid64(layout16):
    G, report = bake_watermarked(WatermarkedField(Sphere(), layout16), 64)
    return G, report


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion():
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
