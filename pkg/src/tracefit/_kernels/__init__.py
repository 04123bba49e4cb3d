"""Inner-loop kernels with a compiled backend and a NumPy fallback.

The compiled module is preferred. Set ``TRACEFIT_PURE_PYTHON=1`` to force the
fallback, e.g. to compare the two backends.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("TRACEFIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

csr_matvec = _impl.csr_matvec
trapezoid_scan = _impl.trapezoid_scan
ilu0 = _impl.ilu0
lower_solve = _impl.lower_solve
upper_solve = _impl.upper_solve
ilu_inverse_diagonal = _impl.ilu_inverse_diagonal

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "csr_matvec",
    "trapezoid_scan",
    "ilu0",
    "lower_solve",
    "upper_solve",
    "ilu_inverse_diagonal",
]
