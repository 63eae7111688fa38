"""Select the projector kernel implementation at import time.

``RPSM_BACKEND`` may be ``auto`` (default: compiled if importable),
``cython`` (fail if the extension is missing) or ``python``.
"""

import os

_choice = os.environ.get("RPSM_BACKEND", "auto").lower()

if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"RPSM_BACKEND must be auto, cython or python, got {_choice!r}")

kernels = None
if _choice in ("auto", "cython"):
    try:
        from . import _radon_ext as kernels
    except ImportError:
        if _choice == "cython":
            raise
if kernels is None:
    from . import _radon_py as kernels

NAME = "cython" if kernels.__name__.endswith("_radon_ext") else "python"
