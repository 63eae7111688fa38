"""Parallel-beam Radon transform for time-sequential acquisition.

One projection per frame: the whole-sequence operator maps an ``(n*n, p)``
frame matrix to an ``(n, p)`` sinogram, column ``t`` projected at angle
``angles[t]``. Forward and adjoint share identical strip weights so the
adjoint is exact to rounding.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ValidationError
from .frames import DynamicObject, ImageFrame, check_finite

__all__ = [
    "Projection",
    "Sinogram",
    "project",
    "backproject",
    "project_dynamic",
    "adjoint_dynamic",
    "fbp_static",
    "forward_op",
    "adjoint_op",
    "ramlak_filter",
]


@dataclass(frozen=True)
class Projection:
    data: np.ndarray
    angle: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).ravel()
        check_finite("projection", data)
        if not np.isfinite(self.angle):
            raise ValidationError("projection angle must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "angle", float(self.angle))

    @property
    def n_det(self):
        return self.data.size


@dataclass(frozen=True)
class Sinogram:
    """``(n, p)`` matrix; column ``t`` is the projection taken at ``angles[t]``."""

    data: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64).ravel()
        if data.ndim != 2:
            raise ValidationError(f"sinogram must be 2-D, got shape {data.shape}")
        if angles.size != data.shape[1]:
            raise ValidationError(
                f"{angles.size} angles for {data.shape[1]} projections"
            )
        check_finite("sinogram", data)
        check_finite("angles", angles)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "angles", angles)

    @property
    def p(self):
        return self.data.shape[1]

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def frames(self):
        return [Projection(self.data[:, t], self.angles[t]) for t in range(self.p)]

    @classmethod
    def from_projections(cls, projections):
        projections = list(projections)
        return cls(
            np.stack([pr.data for pr in projections], axis=1),
            [pr.angle for pr in projections],
        )


def forward_op(f, angles, n):
    """Array-level whole-sequence projector: ``(n*n, p)`` to ``(n, p)``."""
    p = f.shape[1]
    stack = np.ascontiguousarray(f.T).reshape(p, n, n)
    return kernels.forward(stack, np.asarray(angles, dtype=np.float64)).T


def adjoint_op(g, angles, n):
    """Array-level adjoint of :func:`forward_op`: ``(n, p)`` to ``(n*n, p)``."""
    p = g.shape[1]
    out = kernels.adjoint(np.ascontiguousarray(g.T), np.asarray(angles, dtype=np.float64), n)
    return out.reshape(p, n * n).T


def project(frame, angle):
    """Strip-integral projection of one frame at ``angle`` (radians)."""
    if not np.isfinite(angle):
        raise ValidationError("angle must be finite")
    out = kernels.forward(frame.image[None], np.array([float(angle)]))
    return Projection(out[0], angle)


def backproject(proj, n=None):
    """Exact adjoint of :func:`project` for the projection's angle."""
    if n is not None and n != proj.n_det:
        raise ValidationError(f"projection has {proj.n_det} bins, configured n={n}")
    out = kernels.adjoint(proj.data[None], np.array([proj.angle]), proj.n_det)
    return ImageFrame(out[0], proj.n_det)


def project_dynamic(f, angles):
    """Project column ``t`` of ``f`` at ``angles[t]``."""
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if angles.size != f.p:
        raise ValidationError(f"{angles.size} angles for {f.p} frames")
    check_finite("angles", angles)
    return Sinogram(forward_op(f.data, angles, f.n), angles)


def adjoint_dynamic(g):
    return DynamicObject(adjoint_op(g.data, g.angles, g.n), g.n)


def ramlak_filter(n_pad):
    """Frequency response of the band-limited ramp for unit detector pitch."""
    k = np.arange(n_pad)
    k = np.where(k > n_pad // 2, k - n_pad, k)
    h = np.zeros(n_pad)
    h[0] = 0.25
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    return np.real(np.fft.fft(h))


def fbp_static(g):
    """Ram-Lak filtered backprojection treating all views as one static frame.

    A single view is degenerate: a warning is issued and the plain
    backprojection normalised by the ray length is returned.
    """
    if g.p < 1:
        raise ValidationError("no projections")
    n = g.n
    if g.p == 1:
        warnings.warn("single view: returning normalised backprojection", RuntimeWarning)
        return ImageFrame(adjoint_op(g.data, g.angles, n)[:, 0] / n, n)
    n_pad = max(64, 1 << int(np.ceil(np.log2(2 * n))))
    resp = ramlak_filter(n_pad)
    padded = np.zeros((n_pad, g.p))
    padded[:n] = g.data
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=0) * resp[:, None], axis=0))[:n]
    bp = adjoint_op(filtered, g.angles, n).sum(axis=1)
    return ImageFrame(bp * np.pi / g.p, n)
