"""PSM baselines with a smoothed total-variation prior substituted for RED.

The low-rank constraint is imposed by substitution, so the unknowns are the
spatial basis and the latent temporal coefficients only.
"""

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SolverDivergence, ValidationError
from .frames import DynamicObject
from .psm import PSMFactors, seed_empty_columns, svd_init, temporal_basis
from .solver import Diagnostics, Problem, initial_estimate, minimize
from .tomo import Sinogram

__all__ = ["TVConfig", "tv_s", "tv_st", "solve_psm_tv"]


@dataclass
class TVConfig:
    lam: float = 1e-2
    lam_t: float = 0.0
    eps: float = None  # None: 1e-6 times the peak of the initial estimate
    k: int = 3
    d: int = 4
    xi: float = 1e-3
    iters: int = 300
    step: float = 1e-2
    method: str = "adam"
    temporal_basis: str = "dct2"
    init: str = "svd"
    init_window: int = 0
    seed: int = 0
    record_timing: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.lam_t < 0:
            raise ValidationError("TV weights must be >= 0")
        if self.eps is not None and not self.eps > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.eps}")
        if not self.xi > 0:
            raise ValidationError(f"xi must be > 0, got {self.xi}")
        if self.d < self.k:
            raise ValidationError(f"need d >= k, got d={self.d}, k={self.k}")
        if self.method not in ("adam", "gd"):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.init not in ("svd", "random", "zero"):
            raise ValidationError(f"unknown init {self.init!r}")


def _diffs(x):
    # forward differences along the last two axes; last row/column difference is 0
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dy[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return dx, dy


def _diffs_adjoint(px, py):
    out = np.zeros_like(px)
    out[..., :, :-1] -= px[..., :, :-1]
    out[..., :, 1:] += px[..., :, :-1]
    out[..., :-1, :] -= py[..., :-1, :]
    out[..., 1:, :] += py[..., :-1, :]
    return out


def tv_s(frame, eps):
    """Isotropic smoothed TV ``sum sqrt(dx^2 + dy^2 + eps^2)`` and its gradient.

    Accepts a 2-D image or a stack ``(..., rows, cols)`` (summed over all).
    """
    if not eps > 0:
        raise ValidationError(f"epsilon must be > 0, got {eps}")
    x = np.asarray(frame, dtype=float)
    dx, dy = _diffs(x)
    mag = np.sqrt(dx * dx + dy * dy + eps * eps)
    return float(mag.sum()), _diffs_adjoint(dx / mag, dy / mag)


def tv_st(f, eps, lam=1.0, lam_t=0.0):
    """``lam * sum_t tv_s(f_t) + lam_t * sum sqrt((f_{t+1} - f_t)^2 + eps^2)``.

    ``f`` is a :class:`DynamicObject`; the gradient is an ``(n*n, p)`` matrix.
    """
    stack = f.frames()
    val_s, grad_s = tv_s(stack, eps)
    value = lam * val_s
    grad = lam * grad_s
    if lam_t and f.p > 1:
        dt = stack[1:] - stack[:-1]
        mag = np.sqrt(dt * dt + eps * eps)
        value += lam_t * float(mag.sum())
        q = dt / mag
        gt = np.zeros_like(stack)
        gt[:-1] -= q
        gt[1:] += q
        grad = grad + lam_t * gt
    return value, grad.reshape(f.p, -1).T


def _objective(prob, cfg, eps, variant, lam, z):
    n = prob.n
    psi = prob.psi(z)
    low = lam @ psi.T
    res = prob.fwd(low) - prob.g
    value = np.vdot(res, res) + cfg.xi * (np.vdot(lam, lam) + np.vdot(psi, psi))
    g_low = 2.0 * prob.adj(res)
    if cfg.lam or (variant == "st" and cfg.lam_t):
        obj = DynamicObject(low, n)
        v, gr = tv_st(obj, eps, cfg.lam, cfg.lam_t if variant == "st" else 0.0)
        value += v
        g_low = g_low + gr
    glam = g_low @ psi + 2.0 * cfg.xi * lam
    gz = prob.u.T @ (g_low.T @ lam + 2.0 * cfg.xi * psi)
    return float(value), glam, gz, float(np.linalg.norm(res))


def _init(prob, cfg):
    n2, k, d = prob.n * prob.n, cfg.k, prob.u.shape[1]
    if cfg.init == "svd":
        f0 = initial_estimate(Sinogram(prob.g, prob.angles), cfg.init_window)
        fac = seed_empty_columns(svd_init(f0, k, prob.u), cfg.seed)
        return fac.lam, fac.z, float(np.abs(f0).max())
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        return 0.1 * rng.standard_normal((n2, k)), rng.standard_normal((d, k)) / math.sqrt(d), 1.0
    return np.zeros((n2, k)), np.zeros((d, k)), 1.0


def solve_psm_tv(g, cfg, variant="s", callback=None):
    """Fit ``(lam, z)`` to the PSM-TV-S (``variant='s'``) or -ST objective.

    Returns ``(factors, diagnostics)``; one diagnostics row per outer
    iteration, each running ten optimizer steps. ``callback(lam, z, diag)``
    is called after every row.
    """
    if variant not in ("s", "st"):
        raise ValidationError(f"variant must be 's' or 'st', got {variant!r}")
    u = temporal_basis(cfg.temporal_basis, g.p, cfg.d)
    prob = Problem(g, u)
    lam, z, peak = _init(prob, cfg)
    eps = cfg.eps if cfg.eps is not None else 1e-6 * max(peak, 1e-12)
    shape_l, size_l = lam.shape, lam.size

    def fun(x):
        val, gl, gz, _ = _objective(prob, cfg, eps, variant, x[:size_l].reshape(shape_l),
                                    x[size_l:].reshape(z.shape))
        return val, np.concatenate([gl.ravel(), gz.ravel()])

    diag = Diagnostics()
    x = np.concatenate([lam.ravel(), z.ravel()])
    per_row = 10
    rounds = max(1, math.ceil(cfg.iters / per_row))
    done = 0
    prev = None
    for i in range(rounds + 1):
        t0 = time.perf_counter()
        if i:
            steps = min(per_row, cfg.iters - done)
            with np.errstate(over="raise", invalid="raise"):
                try:
                    x = minimize(fun, x, steps, cfg.method, cfg.step)
                except FloatingPointError as exc:
                    raise SolverDivergence(f"non-finite iterate in round {i}: {exc}", diag) from exc
            done += steps
        lam = x[:size_l].reshape(shape_l)
        zz = x[size_l:].reshape(z.shape)
        val, gl, gz, fit = _objective(prob, cfg, eps, variant, lam, zz)
        psi = prob.psi(zz)
        low = lam @ psi.T
        wall = 1e3 * (time.perf_counter() - t0)
        diag.append({
            "iter": done, "H": val, "lagrangian": val, "gap": 0.0,
            "res_f": 0.0, "res_lam": float(np.linalg.norm(gl)),
            "res_psi": float(np.linalg.norm(gz)), "res_gap": 0.0,
            "fit": fit, "wall_ms": wall if cfg.record_timing else float("nan"),
            "diff_f": float(np.linalg.norm(low - prev)) if prev is not None else 0.0,
            "diff_lam": 0.0, "diff_psi": 0.0, "diff_gamma": 0.0,
            "norm_f": float(np.linalg.norm(low)), "norm_lam": float(np.linalg.norm(lam)),
            "norm_psi": float(np.linalg.norm(psi)), "norm_gamma": 0.0,
            "L": 0.0, "beta": 0.0,
        })
        prev = low
        if callback is not None:
            callback(lam, zz, diag)
        if done >= cfg.iters:
            break
    if not np.all(np.isfinite(x)):
        warnings.warn("non-finite TV solution", RuntimeWarning)
    return PSMFactors(x[:size_l].reshape(shape_l), x[size_l:].reshape(z.shape), u), diag
