"""Select the compiled kernels when available, numpy otherwise.

Set ``CONDPCA_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

if os.environ.get("CONDPCA_PURE_PYTHON", "") == "1":
    from . import _kernels_py as kernels
    COMPILED = False
else:
    try:
        from . import _kernels as kernels
        COMPILED = True
    except ImportError:  # pragma: no cover - depends on build
        from . import _kernels_py as kernels
        COMPILED = False

BACKEND = "cython" if COMPILED else "numpy"

__all__ = ["kernels", "COMPILED", "BACKEND"]
