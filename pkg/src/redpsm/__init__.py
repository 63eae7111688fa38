"""RED-PSM reconstruction toolkit for time-sequential dynamic tomography."""

import os as _os

# RPSM_THREADS caps BLAS/OpenMP worker pools; must be set before numpy loads
_threads = _os.environ.get("RPSM_THREADS")
if _threads:
    if not _threads.isdigit() or int(_threads) < 1:
        raise ImportError(f"RPSM_THREADS must be a positive integer, got {_threads!r}")
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from ._backend import NAME as backend  # noqa: E402
from .errors import SolverDivergence, ValidationError  # noqa: E402
from .frames import DynamicObject, ImageFrame  # noqa: E402

__version__ = "0.1.0"

__all__ = ["backend", "DynamicObject", "ImageFrame", "SolverDivergence", "ValidationError"]
