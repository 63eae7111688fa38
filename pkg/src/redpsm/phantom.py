"""Dynamic phantoms, view-angle schedules and time-sequential acquisition."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform

from .errors import ValidationError
from .frames import DynamicObject, ImageFrame
from .tomo import Sinogram, forward_op

__all__ = [
    "shepp_logan",
    "disc",
    "warp_schedule",
    "warp_phantom",
    "affine_dynamic",
    "AngleSchedule",
    "bit_reverse_indices",
    "bit_reversed_angles",
    "sequential_angles",
    "acquire",
]

# modified Shepp-Logan: (value, a, b, x0, y0, phi in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _grid(n, oversample):
    m = n * oversample
    c = (np.arange(m) + 0.5) / m * 2.0 - 1.0
    return c[None, :], -c[:, None]


def _downsample(img, n, oversample):
    return img.reshape(n, oversample, n, oversample).mean(axis=(1, 3))


def shepp_logan(n, oversample=4):
    """Modified Shepp-Logan head phantom on the inscribed disc, ``(n, n)``."""
    x, y = _grid(n, oversample)
    img = np.zeros((n * oversample,) * 2)
    for val, a, b, x0, y0, phi in _SHEPP_LOGAN:
        th = np.deg2rad(phi)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        img += val * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return np.clip(_downsample(img, n, oversample), 0.0, None)


def disc(n, radius=0.5, value=1.0, oversample=4):
    """Centred disc of the given radius (fraction of the half-width).

    Built from the centred grid only, so it is exactly symmetric under
    90-degree rotations and transposition.
    """
    x, y = _grid(n, oversample)
    img = value * (x ** 2 + y ** 2 <= radius ** 2)
    return _downsample(img.astype(float), n, oversample)


def warp_schedule(p, c_max):
    """Linearly increasing warp magnitude with ``C(0) = 0`` and ``C(p-1) = c_max``."""
    if c_max < 0:
        raise ValidationError(f"c_max must be >= 0, got {c_max}")
    if p == 1:
        return np.zeros(1)
    return c_max * np.arange(p) / (p - 1)


def _warp_rows(img, c):
    n = img.shape[0]
    rows = np.arange(n, dtype=float)
    moved = rows - c * np.sin(3.0 * np.pi * rows / n)
    if np.any(np.diff(moved) <= 0):
        raise ValidationError("warp magnitude folds the grid; reduce c_max")
    # source row for every output row; piecewise-linear inverse of the row map
    slope_lo = 1.0 / (moved[1] - moved[0])
    slope_hi = 1.0 / (moved[-1] - moved[-2])
    src = np.interp(rows, moved, rows)
    src = np.where(rows < moved[0], (rows - moved[0]) * slope_lo, src)
    src = np.where(rows > moved[-1], n - 1 + (rows - moved[-1]) * slope_hi, src)
    lo = np.floor(src).astype(int)
    w = src - lo
    out = np.zeros_like(img)
    for r in range(n):
        for j, wt in ((lo[r], 1.0 - w[r]), (lo[r] + 1, w[r])):
            if 0 <= j < n and wt != 0.0:
                out[r] += wt * img[j]
    return out


def warp_phantom(static, p, c_max):
    """Sinusoidal piecewise-affine vertical warp growing linearly in time.

    Row ``n`` of the grid is displaced by ``-C(t) sin(3 pi n / N)``; frames are
    resampled with linear interpolation and zero outside the image.
    """
    img = static.image if isinstance(static, ImageFrame) else np.asarray(static, dtype=float)
    n = img.shape[0]
    c = warp_schedule(p, c_max)
    rows = np.arange(n)
    peak = c_max * np.abs(np.sin(3.0 * np.pi * rows / n))
    support = np.nonzero(np.abs(img).sum(axis=1) > 0)[0]
    if support.size and (np.any(support - peak[support] < 0) or np.any(support + peak[support] > n - 1)):
        warnings.warn("warp may move content outside the frame", RuntimeWarning)
    frames = [img.copy()] + [_warp_rows(img, ct) for ct in c[1:]]
    return DynamicObject.from_frames(np.stack(frames))


def affine_dynamic(static, p, translation=None, scale=None, rotation=None):
    """Per-frame affine resampling about the image centre.

    ``translation`` is ``(p, 2)`` in pixels as (rows, cols), ``scale`` is
    ``(p,)`` or ``(p, 2)``, ``rotation`` is ``(p,)`` radians. Missing
    parameters default to the identity.
    """
    img = static.image if isinstance(static, ImageFrame) else np.asarray(static, dtype=float)
    n = img.shape[0]
    tr = np.zeros((p, 2)) if translation is None else np.asarray(translation, float).reshape(p, 2)
    sc = np.ones((p, 2)) if scale is None else np.broadcast_to(
        np.asarray(scale, float).reshape(p, -1), (p, 2))
    rot = np.zeros(p) if rotation is None else np.asarray(rotation, float).reshape(p)
    if np.any(np.abs(sc) < 1e-12):
        raise ValidationError("singular scale in affine motion")
    centre = np.full(2, 0.5 * (n - 1))
    frames = []
    for t in range(p):
        if not np.any(tr[t]) and np.all(sc[t] == 1.0) and rot[t] == 0.0:
            frames.append(img.copy())
            continue
        cs, sn = np.cos(rot[t]), np.sin(rot[t])
        fwd = np.array([[cs, -sn], [sn, cs]]) @ np.diag(sc[t])
        inv = np.linalg.inv(fwd)
        offset = centre - inv @ (centre + tr[t])
        frames.append(affine_transform(img, inv, offset=offset, order=1, mode="constant", cval=0.0))
    return DynamicObject.from_frames(np.stack(frames))


@dataclass(frozen=True)
class AngleSchedule:
    angles: np.ndarray
    p_hat: int
    scheme: str

    @property
    def p(self):
        return self.angles.size


def bit_reverse_indices(m):
    """Bit-reversal permutation of ``range(m)``; ``m`` must be a power of two."""
    if m < 1 or m & (m - 1):
        raise ValidationError(f"bit reversal needs a power of two, got {m}")
    bits = m.bit_length() - 1
    idx = np.arange(m)
    out = np.zeros(m, dtype=np.int64)
    for b in range(bits):
        out |= ((idx >> b) & 1) << (bits - 1 - b)
    return out


def _check_p_hat(p, p_hat):
    p_hat = p if p_hat is None else int(p_hat)
    if not (1 <= p_hat <= p):
        raise ValidationError(f"need 1 <= p_hat <= p, got p_hat={p_hat}, p={p}")
    return p_hat


def bit_reversed_angles(p, p_hat=None, angle_range=np.pi):
    """``p_hat`` uniform angles on ``[0, angle_range)`` in bit-reversed order, tiled to length ``p``."""
    p_hat = _check_p_hat(p, p_hat)
    base = bit_reverse_indices(p_hat) * (angle_range / p_hat)
    return AngleSchedule(np.resize(base, p), p_hat, "bit-reversed")


def sequential_angles(p, p_hat=None, angle_range=np.pi):
    p_hat = _check_p_hat(p, p_hat)
    base = np.arange(p_hat) * (angle_range / p_hat)
    return AngleSchedule(np.resize(base, p), p_hat, "sequential")


def acquire(f, sched, sigma, seed=0):
    """Time-sequential projections plus i.i.d. Gaussian measurement noise."""
    angles = sched.angles if isinstance(sched, AngleSchedule) else np.asarray(sched, dtype=float)
    if angles.size != f.p:
        raise ValidationError(f"{angles.size} angles for {f.p} frames")
    if sigma < 0:
        raise ValidationError("noise std must be >= 0")
    g = forward_op(f.data, angles, f.n)
    if sigma > 0:
        g = g + sigma * np.random.default_rng(seed).standard_normal(g.shape)
    return Sinogram(g, angles)
