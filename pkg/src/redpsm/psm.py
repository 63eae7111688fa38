"""Partially separable (rank-K) spatio-temporal representation.

A dynamic object is stored as an ``(n*n, p)`` matrix whose column ``t`` is the
vectorised frame at time ``t``. The factorised form is ``f = lam @ (u @ z).T``
with a spatial basis ``lam`` (``n*n x k``), latent temporal coefficients
``z`` (``d x k``) and a fixed interpolation basis ``u`` (``p x d``).
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .frames import DynamicObject, ImageFrame, check_finite as _finite

__all__ = [
    "DynamicObject",
    "PSMFactors",
    "compose",
    "temporal_basis",
    "svd_init",
    "seed_empty_columns",
    "frame_extract",
    "stack_frames",
]


@dataclass(frozen=True)
class PSMFactors:
    lam: np.ndarray
    z: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        z = np.asarray(self.z, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        if lam.ndim != 2 or z.ndim != 2 or u.ndim != 2:
            raise ValidationError("factors must be 2-D matrices")
        if lam.shape[1] != z.shape[1]:
            raise ValidationError(
                f"order mismatch: lam has {lam.shape[1]} columns, z has {z.shape[1]}"
            )
        if u.shape[1] != z.shape[0]:
            raise ValidationError(
                f"temporal dim mismatch: u is {u.shape}, z is {z.shape}"
            )
        if z.shape[0] < z.shape[1]:
            raise ValidationError(f"need d >= k, got d={z.shape[0]}, k={z.shape[1]}")
        n = int(round(np.sqrt(lam.shape[0])))
        if n * n != lam.shape[0]:
            raise ValidationError(f"lam rows {lam.shape[0]} is not a square pixel count")
        for name, arr in (("lam", lam), ("z", z), ("u", u)):
            _finite(name, arr)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "u", u)

    @property
    def k(self):
        return self.lam.shape[1]

    @property
    def d(self):
        return self.z.shape[0]

    @property
    def p(self):
        return self.u.shape[0]

    @property
    def n(self):
        return int(round(np.sqrt(self.lam.shape[0])))

    @property
    def psi(self):
        return self.u @ self.z

    def parameter_count(self):
        """Number of stored free parameters, ``k*n*n + k*d``."""
        return self.lam.size + self.z.size


def compose(factors):
    """Return ``lam @ (u z).T`` as a :class:`DynamicObject`."""
    return DynamicObject(factors.lam @ factors.psi.T, factors.n)


def temporal_basis(kind, p, d):
    """Fixed ``(p, d)`` temporal interpolation basis.

    ``dct2`` gives the first ``d`` orthonormal DCT-II vectors. ``cubic-spline``
    gives cardinal natural cubic splines on ``d`` uniform knots spanning
    ``[0, p-1]``, sampled at the ``p`` integer times.
    """
    if not (1 <= d <= p):
        raise ValidationError(f"need 1 <= d <= p, got d={d}, p={p}")
    if kind == "dct2":
        return dct(np.eye(p), type=2, norm="ortho", axis=0)[:d].T.copy()
    if kind == "cubic-spline":
        if d == 1:
            return np.ones((p, 1))
        knots = np.linspace(0.0, p - 1, d)
        t = np.arange(p, dtype=float)
        if d == 2:
            # natural cubic through two points is the line
            w = t / (p - 1)
            return np.stack([1.0 - w, w], axis=1)
        spline = CubicSpline(knots, np.eye(d), bc_type="natural", axis=0)
        u = spline(t)
        on_knot = np.isclose(t[:, None], knots[None, :], atol=1e-12)
        rows, cols = np.nonzero(on_knot)
        u[rows] = np.eye(d)[cols]
        return u
    raise ValidationError(f"unknown temporal basis kind {kind!r}")


def _fix_signs(vt):
    # largest-magnitude entry of each right singular vector made non-negative
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return signs


def svd_init(f0, k, u):
    """Rank-``k`` truncated SVD initialisation.

    ``lam = A Sigma`` and ``z`` is the least-squares fit of ``u z`` to the
    leading right singular vectors. Singular triplets beyond the numerical
    rank of ``f0`` are zero-filled (see :func:`seed_empty_columns`).
    """
    data = f0.data if isinstance(f0, DynamicObject) else np.asarray(f0, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[0] != data.shape[1]:
        raise ValidationError(f"u has {u.shape[0]} rows, object has {data.shape[1]} frames")
    if k < 1:
        raise ValidationError(f"order must be >= 1, got {k}")
    if u.shape[1] < k:
        raise ValidationError(f"need d >= k, got d={u.shape[1]}, k={k}")
    a, s, vt = np.linalg.svd(data, full_matrices=False)
    r = min(k, s.size)
    tol = (s[0] if s.size else 0.0) * max(data.shape) * np.finfo(float).eps
    r = int(min(r, np.count_nonzero(s > tol))) if s.size and s[0] > 0 else 0
    lam = np.zeros((data.shape[0], k))
    psi0 = np.zeros((data.shape[1], k))
    if r:
        signs = _fix_signs(vt[:r])
        lam[:, :r] = a[:, :r] * (s[:r] * signs)
        psi0[:, :r] = vt[:r].T * signs
    z, *_ = np.linalg.lstsq(u, psi0, rcond=None)
    return PSMFactors(lam, z, u)


def seed_empty_columns(factors, seed=0):
    """Give every all-zero (spatial, temporal) pair a random latent column.

    A pair with both columns zero is a stationary point of any alternating
    scheme, so it would never be used. The spatial column stays zero and the
    latent column is drawn from N(0, I / d), so its expected norm matches the
    unit-norm singular vectors it sits beside.
    """
    lam, z = factors.lam, factors.z.copy()
    empty = ~(np.any(lam != 0, axis=0) | np.any(z != 0, axis=0))
    if np.any(empty):
        rng = np.random.default_rng(seed)
        z[:, empty] = rng.standard_normal((z.shape[0], int(empty.sum()))) / np.sqrt(z.shape[0])
    return PSMFactors(lam, z, factors.u)


def frame_extract(f, t):
    """Column ``t`` of ``f`` as an :class:`ImageFrame`."""
    if not (0 <= t < f.p):
        raise ValidationError(f"frame index {t} out of range [0, {f.p})")
    return ImageFrame(f.data[:, t].copy(), f.n)


def stack_frames(frames):
    """Inverse of extracting every frame."""
    frames = [fr.image if isinstance(fr, ImageFrame) else fr for fr in frames]
    return DynamicObject.from_frames(np.stack(frames))
