"""Backend selection for the hot inner loops.

The compiled extension ``funcmark._core`` is used when it imports; the numpy
fallback ``funcmark._core_py`` otherwise. Setting ``FUNCMARK_PURE_PYTHON=1``
forces the fallback (the benchmark and the cross-backend tests use this).
"""

from __future__ import annotations

import os

from . import _core_py

if os.environ.get("FUNCMARK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _core_py

BACKEND = "cython" if _impl is not _core_py else "python"

bspline_eval = _impl.bspline_eval
closest_point_triangle = _impl.closest_point_triangle


def available_backends():
    """Map backend name -> kernel module, for every backend importable here."""
    out = {"python": _core_py}
    try:
        from . import _core
    except ImportError:
        return out
    out["cython"] = _core
    return out
