"""Pure numpy strip-integral projector kernels.

Same contract as the compiled ``_radon_ext`` module; used when the extension
is not built or when ``RPSM_BACKEND=python``.

Geometry: pixel ``(r, c)`` of an ``n x n`` image is the unit square centred at
``x = c - (n-1)/2``, ``y = (n-1)/2 - r``. Detector bin ``j`` covers
``[j - n/2, j - n/2 + 1)`` along ``s = x cos(theta) + y sin(theta)``. Each
bin value is the integral of the continuous projection over the bin, so a
pixel contributes the mass of its trapezoidal footprint falling in the bin.
"""

from functools import lru_cache

import numpy as np

_THIN = 1e-7


def _footprint_cdf(x, a, b):
    """CDF of the sum of two centred uniforms of widths ``a >= b``."""
    if b < _THIN:
        return np.clip(x / a + 0.5, 0.0, 1.0)
    h1 = 0.5 * (a + b)
    h2 = 0.5 * (a - b)

    def r2(u):
        u = np.maximum(u, 0.0)
        return 0.5 * u * u

    return (r2(x + h1) - r2(x + h2) - r2(x - h2) + r2(x - h1)) / (a * b)


def bin_weight(offset, theta):
    """Mass of a unit pixel landing in a bin whose centre is ``offset`` away.

    ``offset`` is pixel-centre minus bin-centre along the detector axis.
    """
    a, b = abs(np.cos(theta)), abs(np.sin(theta))
    if a < b:
        a, b = b, a
    offset = np.asarray(offset, dtype=float)
    return _footprint_cdf(0.5 - offset, a, b) - _footprint_cdf(-0.5 - offset, a, b)


@lru_cache(maxsize=1024)
def _weights(n, theta):
    c = np.arange(n) - 0.5 * (n - 1)
    x = c[None, :]
    y = -c[:, None]
    s = (x * np.cos(theta) + y * np.sin(theta)).ravel()
    u = s + 0.5 * (n - 1)
    jc = np.rint(u).astype(np.int64)
    idx = np.stack([jc - 1, jc, jc + 1])
    w = bin_weight(u[None, :] - idx, theta)
    valid = (idx >= 0) & (idx < n)
    w = np.where(valid, w, 0.0)
    idx = np.where(valid, idx, 0)
    idx.setflags(write=False)
    w.setflags(write=False)
    return idx, w


def forward(images, angles):
    """Project a stack ``(p, n, n)`` at ``angles`` (length p) to ``(p, n)``."""
    images = np.asarray(images, dtype=np.float64)
    p, n, _ = images.shape
    out = np.zeros((p, n))
    for t in range(p):
        idx, w = _weights(n, float(angles[t]))
        flat = images[t].ravel()
        for k in range(3):
            out[t] += np.bincount(idx[k], weights=w[k] * flat, minlength=n)
    return out


def adjoint(sino, angles, n):
    """Exact transpose of :func:`forward`; ``(p, n)`` to ``(p, n, n)``."""
    sino = np.asarray(sino, dtype=np.float64)
    p = sino.shape[0]
    out = np.zeros((p, n * n))
    for t in range(p):
        idx, w = _weights(n, float(angles[t]))
        g = sino[t]
        out[t] = (w * g[idx]).sum(axis=0)
    return out.reshape(p, n, n)
