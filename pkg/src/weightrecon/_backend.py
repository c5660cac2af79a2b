"""Pick the compiled kernels when available, else the pure-Python twins.

Set ``WEIGHTRECON_PURE_PYTHON=1`` to force the fallback.
"""

import os

from weightrecon import _core_py

if os.environ.get("WEIGHTRECON_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from weightrecon import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _core_py
        BACKEND = "python"

linear_sum_assignment = _impl.linear_sum_assignment
jacobi_eigh = _impl.jacobi_eigh
