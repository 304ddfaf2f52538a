"""Watermarking of signed distance fields through spherical-partition deformations.

The usual flow is::

    F = Sphere(0.5)
    layout = PartitionLayout.random(16, seed=1)
    G, report = bake_watermarked(WatermarkedField(F, layout), dims=128)
    mesh = marching_cubes(G, 256)
    detect(mesh, F, layout).verdict
"""

__version__ = "0.1.0"

from .embed import (
    NewtonConfig,
    WatermarkedField,
    bake_watermarked,
    deform,
    deform_jacobian,
    invert_deform,
    wm_eval,
    wm_gradient,
)
from .errors import FuncmarkError
from .field import GridField, ScalarField, SmoothUnion, Sphere, Torus, bake_grid, blob
from .kernels import BACKEND
from .partition import PartitionLayout, partition_of, window, window_gradient
from .surface import TriangleMesh, dual_contouring, marching_cubes, sample_surface
from .verify import SimilarityTransform, align, decode, detect, tag_points

__all__ = [
    "BACKEND", "FuncmarkError", "GridField", "NewtonConfig", "PartitionLayout", "ScalarField",
    "SimilarityTransform", "SmoothUnion", "Sphere", "Torus", "TriangleMesh", "WatermarkedField",
    "align", "bake_grid", "bake_watermarked", "blob", "decode", "deform", "deform_jacobian",
    "detect", "dual_contouring", "invert_deform", "marching_cubes", "partition_of",
    "sample_surface", "tag_points", "window", "window_gradient", "wm_eval", "wm_gradient",
]
