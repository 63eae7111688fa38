"""Image-frame and frame-sequence value types."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class ImageFrame:
    """Single ``n x n`` frame stored as a row-major length ``n*n`` vector."""

    data: np.ndarray
    n: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if data.size != self.n * self.n:
            raise ValidationError(f"frame of side {self.n} needs {self.n ** 2} values, got {data.size}")
        check_finite("frame", data)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_image(cls, image):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2 or image.shape[0] != image.shape[1]:
            raise ValidationError(f"expected a square image, got shape {image.shape}")
        return cls(image, image.shape[0])

    @property
    def image(self):
        return self.data.reshape(self.n, self.n)


@dataclass(frozen=True)
class DynamicObject:
    """``(n*n, p)`` matrix of frames; column ``t`` is frame ``t``."""

    data: np.ndarray
    n: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != self.n * self.n:
            raise ValidationError(
                f"expected ({self.n * self.n}, p) frame matrix, got {data.shape}"
            )
        check_finite("dynamic object", data)
        object.__setattr__(self, "data", data)

    @property
    def p(self):
        return self.data.shape[1]

    @classmethod
    def from_frames(cls, frames):
        """Build from a ``(p, n, n)`` image stack."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
            raise ValidationError(f"expected (p, n, n) stack, got {frames.shape}")
        p, n, _ = frames.shape
        return cls(frames.reshape(p, n * n).T.copy(), n)

    def frames(self):
        """Return the ``(p, n, n)`` image stack (a copy)."""
        return self.data.T.reshape(self.p, self.n, self.n).copy()
