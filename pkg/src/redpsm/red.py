"""RED regularizer ``rho(f) = 0.5 f.(f - D(f))`` and its gradient rule."""

import numpy as np

from .denoisers import denoise_columns
from .frames import DynamicObject, ImageFrame

__all__ = ["rho", "grad_rho", "rho_bar", "grad_rho_bar"]


def _img(frame):
    return frame.image if isinstance(frame, ImageFrame) else np.asarray(frame, dtype=float)


def rho(frame, den):
    x = _img(frame)
    return 0.5 * float(np.vdot(x, x - den(x)))


def grad_rho(frame, den):
    """``f - D(f)``; the descent direction even for non-symmetric denoisers."""
    x = _img(frame)
    g = x - den(x)
    return ImageFrame(g, x.shape[0]) if isinstance(frame, ImageFrame) else g


def _matrix(f, n):
    if isinstance(f, DynamicObject):
        return f.data, f.n
    return np.asarray(f, dtype=float), n


def rho_bar(f, den, n=None):
    """Sum of :func:`rho` over the columns of a frame matrix."""
    data, n = _matrix(f, n)
    return 0.5 * float(np.vdot(data, data - denoise_columns(den, data, n)))


def grad_rho_bar(f, den, n=None):
    data, n = _matrix(f, n)
    return data - denoise_columns(den, data, n)
