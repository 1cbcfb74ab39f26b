"""Pivot-kernel selection.

The simplex inner loop is the hot spot of the whole package, so it exists
twice: a Cython extension (:mod:`drfmt.lp._kernel`) and a pure-numpy
reference (:mod:`drfmt.lp._kernel_py`) with identical arithmetic, byte for
byte. The compiled kernel is used when importable; setting the environment
variable ``DRFMT_LP_BACKEND`` to ``compiled`` or ``python`` forces one side.
"""

from __future__ import annotations

import os

_requested = os.environ.get("DRFMT_LP_BACKEND", "").strip().lower()

if _requested not in ("", "compiled", "python"):
    raise ImportError(
        f"DRFMT_LP_BACKEND must be 'compiled' or 'python', got {_requested!r}")

if _requested == "python":
    from ._kernel_py import simplex_loop
    BACKEND = "python"
elif _requested == "compiled":
    from ._kernel import simplex_loop  # type: ignore[no-redef]
    BACKEND = "compiled"
else:
    try:
        from ._kernel import simplex_loop  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        from ._kernel_py import simplex_loop
        BACKEND = "python"

__all__ = ["simplex_loop", "BACKEND"]
