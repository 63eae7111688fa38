"""Image quality metrics: PSNR, SSIM, MAE and HFEN."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate

from .errors import ValidationError
from .frames import DynamicObject, ImageFrame

__all__ = [
    "PSNR_CAP",
    "psnr",
    "ssim",
    "mae",
    "hfen",
    "gaussian_window",
    "log_kernel",
    "MetricsReport",
    "evaluate",
]

PSNR_CAP = 99.0


def _pair(ref, est):
    a = ref.image if isinstance(ref, ImageFrame) else np.asarray(ref, dtype=float)
    b = est.image if isinstance(est, ImageFrame) else np.asarray(est, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(ref, est, peak=None):
    """``10 log10(peak^2 / MSE)`` in dB; identical inputs give ``PSNR_CAP``.

    ``peak`` defaults to the maximum of ``ref``.
    """
    a, b = _pair(ref, est)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    peak = float(a.max()) if peak is None else float(peak)
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(ref, est, k1=0.01, k2=0.03, window=11, sigma=1.5, data_range=None):
    """Single-scale SSIM with a Gaussian window over valid window positions."""
    a, b = _pair(ref, est)
    if min(a.shape) < window:
        raise ValidationError(f"image smaller than the {window}x{window} SSIM window")
    if data_range is None:
        data_range = float(a.max() - a.min()) or 1.0
    w = gaussian_window(window, sigma)
    h = window // 2

    def filt(x):
        return correlate(x, w, mode="constant")[h:x.shape[0] - h, h:x.shape[1] - h]

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def mae(ref, est):
    a, b = _pair(ref, est)
    return float(np.mean(np.abs(a - b)))


def log_kernel(size=15, sigma=1.5):
    """Zero-sum rotationally symmetric Laplacian-of-Gaussian kernel."""
    r = np.arange(size) - (size - 1) / 2
    xx, yy = np.meshgrid(r, r)
    rr = xx * xx + yy * yy
    g = np.exp(-rr / (2 * sigma * sigma))
    g /= g.sum()
    h = g * (rr - 2 * sigma * sigma) / sigma ** 4
    return h - h.mean()


def hfen(ref, est, sigma=1.5, size=15):
    """L2 norm of the LoG-filtered difference (symmetric boundary)."""
    a, b = _pair(ref, est)
    return float(np.linalg.norm(correlate(b - a, log_kernel(size, sigma), mode="reflect")))


@dataclass
class MetricsReport:
    method: str
    psnr: np.ndarray
    ssim: np.ndarray
    mae: np.ndarray
    hfen: np.ndarray
    config: dict = field(default_factory=dict)

    def mean(self):
        return {
            "psnr": float(np.mean(self.psnr)),
            "ssim": float(np.mean(self.ssim)),
            "mae": float(np.mean(self.mae)),
            "hfen": float(np.mean(self.hfen)),
        }

    def rows(self):
        out = [
            {"frame": t, "psnr": self.psnr[t], "ssim": self.ssim[t], "mae": self.mae[t], "hfen": self.hfen[t]}
            for t in range(self.psnr.size)
        ]
        out.append({"frame": "mean", **self.mean()})
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "frame", "psnr", "ssim", "mae", "hfen"])
            w.writeheader()
            for r in self.rows():
                w.writerow({"method": self.method, **r})


def evaluate(ref, est, method="", peak="sequence", config=None):
    """Per-frame metrics between two dynamic objects.

    ``peak='sequence'`` uses the maximum of the whole reference sequence as
    the PSNR peak; ``'frame'`` uses each reference frame's own maximum.
    """
    if not isinstance(ref, DynamicObject) or not isinstance(est, DynamicObject):
        raise ValidationError("evaluate expects two DynamicObject instances")
    if ref.data.shape != est.data.shape:
        raise ValidationError(f"shape mismatch: {ref.data.shape} vs {est.data.shape}")
    if peak not in ("sequence", "frame"):
        raise ValidationError(f"peak must be 'sequence' or 'frame', got {peak!r}")
    a, b = ref.frames(), est.frames()
    seq_peak = float(a.max())
    seq_range = float(a.max() - a.min()) or 1.0
    vals = {"psnr": [], "ssim": [], "mae": [], "hfen": []}
    for fa, fb in zip(a, b):
        vals["psnr"].append(psnr(fa, fb, seq_peak if peak == "sequence" else None))
        vals["ssim"].append(ssim(fa, fb, data_range=seq_range if peak == "sequence" else None))
        vals["mae"].append(mae(fa, fb))
        vals["hfen"].append(hfen(fa, fb))
    return MetricsReport(method, *(np.asarray(vals[k]) for k in ("psnr", "ssim", "mae", "hfen")),
                         config=dict(config or {}))
