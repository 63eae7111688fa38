"""Plug-in image denoisers for the RED prior.

Every denoiser maps an ``(n, n)`` array to an ``(n, n)`` array and is
immutable after construction. The Gaussian kind is linear, symmetric and has
gain at most one, so it satisfies the convergence hypotheses with ``L_D = 1``;
CNN denoisers only get empirical checks (:func:`estimate_lipschitz`,
:func:`check_passivity`).
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .frames import ImageFrame

__all__ = [
    "Denoiser",
    "GaussianDenoiser",
    "CNNWeights",
    "CNNDenoiser",
    "PatchedDenoiser",
    "make_denoiser",
    "denoise",
    "denoise_patched",
    "denoise_columns",
    "estimate_lipschitz",
    "check_passivity",
    "LipschitzEstimate",
    "PassivityReport",
    "load_weights",
    "save_weights",
]

MAGIC = b"RPDN1\0"


class Denoiser:
    """Base class; subclasses implement :meth:`apply` on 2-D arrays."""

    kind = "abstract"
    lipschitz_hint = None
    exact_lipschitz = None

    def apply(self, image):
        raise NotImplementedError

    def __call__(self, image):
        return self.apply(np.asarray(image, dtype=np.float64))

    def apply_batch(self, stack):
        """Denoise a ``(m, n, n)`` stack; subclasses may vectorise this."""
        return np.stack([self.apply(im) for im in stack]) if len(stack) else stack.copy()


class GaussianDenoiser(Denoiser):
    """Normalised Gaussian blur with half-sample symmetric boundary."""

    kind = "gaussian"
    exact_lipschitz = 1.0

    def __init__(self, sigma):
        if not sigma > 0:
            raise ValidationError(f"gaussian sigma must be > 0, got {sigma}")
        self.sigma = float(sigma)
        self.lipschitz_hint = 1.0

    def apply(self, image):
        return gaussian_filter(image, self.sigma, mode="reflect", truncate=4.0)

    def apply_batch(self, stack):
        # a zero sigma leaves the batch axis alone; the 2-D passes run in the same order
        return gaussian_filter(stack, (0.0, self.sigma, self.sigma), mode="reflect", truncate=4.0)

    def __repr__(self):
        return f"GaussianDenoiser(sigma={self.sigma})"


@dataclass
class CNNWeights:
    """Conv stack: ReLU between layers, linear single-channel output.

    ``kernels[i]`` has shape ``(out, in, kh, kw)``; values are kept in
    float32 exactly as stored on disk.
    """

    kernels: list
    biases: list
    residual: bool = False
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=np.float32) for k in self.kernels]
        self.biases = [np.asarray(b, dtype=np.float32).ravel() for b in self.biases]
        self.validate()

    def validate(self):
        if not self.kernels:
            raise ValidationError("CNN needs at least one layer")
        if len(self.kernels) != len(self.biases):
            raise ValidationError("one bias vector per layer required")
        prev = 1
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            if k.ndim != 4:
                raise ValidationError(f"layer {i}: kernel must be 4-D, got {k.shape}")
            out_ch, in_ch, kh, kw = k.shape
            if in_ch != prev:
                raise ValidationError(f"layer {i}: expects {in_ch} input channels, previous layer gives {prev}")
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValidationError(f"layer {i}: kernel size must be odd for same padding, got {kh}x{kw}")
            if b.size != out_ch:
                raise ValidationError(f"layer {i}: bias length {b.size} != out channels {out_ch}")
            if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i}: non-finite weights")
            prev = out_ch
        if prev != 1:
            raise ValidationError(f"last layer must have one output channel, got {prev}")

    @property
    def mode(self):
        return "residual" if self.residual else "direct"

    @classmethod
    def scaled_identity(cls, scale=1.0):
        """One 1x1 layer computing ``scale * x``."""
        return cls([np.full((1, 1, 1, 1), scale)], [np.zeros(1)])

    @classmethod
    def random(cls, channels=(8, 8), kernel=3, seed=0, residual=False, scale=0.1):
        rng = np.random.default_rng(seed)
        chans = [1, *channels, 1]
        kernels = [
            scale * rng.standard_normal((o, i, kernel, kernel))
            for i, o in zip(chans[:-1], chans[1:])
        ]
        biases = [scale * rng.standard_normal(o) for o in chans[1:]]
        return cls(kernels, biases, residual)


def _conv_same(x, kernel, bias):
    # x: (in, h, w); cross-correlation with symmetric padding
    _, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)), mode="symmetric")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return np.einsum("ihwab,oiab->ohw", win, kernel.astype(np.float64)) + bias[:, None, None]


class CNNDenoiser(Denoiser):
    def __init__(self, weights, lipschitz_hint=None):
        self.weights = weights
        self.kind = "cnn-residual" if weights.residual else "cnn-direct"
        self.lipschitz_hint = lipschitz_hint

    def apply(self, image):
        x = image[None]
        last = len(self.weights.kernels) - 1
        for i, (k, b) in enumerate(zip(self.weights.kernels, self.weights.biases)):
            x = _conv_same(x, k, b.astype(np.float64))
            if i < last:
                np.maximum(x, 0.0, out=x)
        out = x[0]
        return image - out if self.weights.residual else out

    def __repr__(self):
        return f"CNNDenoiser({self.kind}, layers={len(self.weights.kernels)})"


class PatchedDenoiser(Denoiser):
    """Apply ``inner`` to overlapping ``patch x patch`` tiles and average overlaps."""

    kind = "patched"

    def __init__(self, inner, patch=8, stride=2):
        if not (1 <= stride <= patch):
            raise ValidationError(f"need 1 <= stride <= patch, got stride={stride}, patch={patch}")
        self.inner = inner
        self.patch = int(patch)
        self.stride = int(stride)
        self.lipschitz_hint = inner.lipschitz_hint

    def grid(self, n):
        """Patch origins along one axis and the padded side length."""
        if self.patch > n:
            raise ValidationError(f"patch size {self.patch} exceeds frame size {n}")
        extra = (-(n - self.patch)) % self.stride
        m = n + extra
        return np.arange(0, m - self.patch + 1, self.stride), m

    def apply(self, image):
        return self.apply_batch(image[None])[0]

    def apply_batch(self, stack):
        n = stack.shape[-1]
        starts, m = self.grid(n)
        b = self.patch
        x = np.pad(stack, ((0, 0), (0, m - n), (0, m - n)), mode="symmetric") if m > n else stack
        tiles = sliding_window_view(x, (b, b), axis=(1, 2))[:, starts][:, :, starts]
        k = starts.size
        out = self.inner.apply_batch(tiles.reshape(-1, b, b)).reshape(len(stack), k, k, b, b)
        acc = np.zeros((len(stack), m, m))
        cnt = np.zeros((m, m))
        rows, cols = np.ix_(starts, starts)
        # origins are distinct, so each (i, j) offset touches every pixel at most once
        for i in range(b):
            for j in range(b):
                acc[:, rows + i, cols + j] += out[:, :, :, i, j]
                cnt[rows + i, cols + j] += 1.0
        return (acc / cnt)[:, :n, :n]

    def __repr__(self):
        return f"PatchedDenoiser({self.inner!r}, patch={self.patch}, stride={self.stride})"


def make_denoiser(kind, sigma=1.0, weights=None, patch=8, stride=2, inner=None):
    """Build a denoiser from config-style arguments.

    ``kind`` is ``gaussian``, ``cnn-direct``, ``cnn-residual`` or
    ``patched`` (wrapping ``inner``, itself a kind string or a denoiser).
    ``weights`` may be a path or :class:`CNNWeights`.
    """
    if kind == "gaussian":
        return GaussianDenoiser(sigma)
    if kind in ("cnn-direct", "cnn-residual"):
        if weights is None:
            raise ValidationError(f"{kind} denoiser needs a weight file")
        w = weights if isinstance(weights, CNNWeights) else load_weights(weights)
        if w.residual != (kind == "cnn-residual"):
            raise ValidationError(f"weight file mode {w.mode!r} does not match kind {kind!r}")
        return CNNDenoiser(w)
    if kind == "patched":
        if inner is None:
            inner = "gaussian"
        if isinstance(inner, str):
            inner = make_denoiser(inner, sigma=sigma, weights=weights)
        return PatchedDenoiser(inner, patch, stride)
    raise ValidationError(f"unknown denoiser kind {kind!r}")


def denoise(den, frame):
    """Denoise an :class:`ImageFrame`."""
    return ImageFrame(den(frame.image), frame.n)


def denoise_patched(den, frame):
    if not isinstance(den, PatchedDenoiser):
        raise ValidationError("denoise_patched needs a PatchedDenoiser")
    return denoise(den, frame)


def denoise_columns(den, f, n):
    """Apply ``den`` to every column of an ``(n*n, p)`` frame matrix."""
    stack = np.ascontiguousarray(np.asarray(f, dtype=np.float64).T).reshape(-1, n, n)
    return den.apply_batch(stack).reshape(f.shape[1], n * n).T.copy()


@dataclass(frozen=True)
class LipschitzEstimate:
    estimate: float
    exact_bound: float = None


def estimate_lipschitz(den, probes=16, seed=0, n=16):
    """Largest observed gain ``|D(a) - D(b)| / |a - b|`` over random probes.

    Each probe draws one far pair and one small perturbation pair.
    """
    if probes < 1:
        raise ValidationError("need at least one probe")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(probes):
        a = rng.random((n, n))
        pairs = [(a, rng.random((n, n))), (a, a + 1e-3 * rng.standard_normal((n, n)))]
        for x, y in pairs:
            num = np.linalg.norm(den(x) - den(y))
            den_ = np.linalg.norm(x - y)
            if den_ > 0:
                best = max(best, num / den_)
    return LipschitzEstimate(float(best), den.exact_lipschitz)


@dataclass(frozen=True)
class PassivityReport:
    ratios: np.ndarray
    worst: float
    passive: bool


def check_passivity(den, frames):
    """Report ``|D(f)| / |f|`` per sample (zero frames count as ratio 0)."""
    ratios = []
    for f in frames:
        img = f.image if isinstance(f, ImageFrame) else np.asarray(f, dtype=float)
        nf = np.linalg.norm(img)
        ratios.append(0.0 if nf == 0 else np.linalg.norm(den(img)) / nf)
    ratios = np.asarray(ratios)
    worst = float(ratios.max()) if ratios.size else 0.0
    return PassivityReport(ratios, worst, bool(worst <= 1.0 + 1e-12))


def save_weights(path, weights):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IB", len(weights.kernels), 1 if weights.residual else 0))
        for k, b in zip(weights.kernels, weights.biases):
            fh.write(struct.pack("<4I", *k.shape))
            fh.write(np.ascontiguousarray(k, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_weights(path):
    """Read a weight file written by :func:`save_weights`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:6] != MAGIC:
        raise ValidationError(f"{path}: bad magic, not an RPDN1 weight file")
    pos = 6

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise ValidationError(f"{path}: truncated while reading {what}")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    n_layers, mode = struct.unpack("<IB", take(5, "header"))
    if mode not in (0, 1):
        raise ValidationError(f"{path}: mode byte must be 0 or 1, got {mode}")
    kernels, biases = [], []
    for i in range(n_layers):
        shape = struct.unpack("<4I", take(16, f"layer {i} shape"))
        count = int(np.prod(shape))
        k = np.frombuffer(take(4 * count, f"layer {i} kernel"), dtype="<f4").reshape(shape)
        b = np.frombuffer(take(4 * shape[0], f"layer {i} bias"), dtype="<f4")
        kernels.append(k.astype(np.float32))
        biases.append(b.astype(np.float32))
    if pos != len(buf):
        raise ValidationError(f"{path}: {len(buf) - pos} trailing bytes")
    return CNNWeights(kernels, biases, residual=bool(mode))
