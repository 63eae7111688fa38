"""Bilinear ADMM for the RED-regularised rank-K model.

Each outer iteration runs a spatial-basis step, a temporal-coefficient step,
an ``f`` step (exact variational denoising or the single-denoiser-call
fixed-point update) and a scaled dual update. The augmented Lagrangian,
objective, constraint gap and first-order stationarity residuals are
recorded after every iteration.
"""

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .denoisers import Denoiser, GaussianDenoiser, denoise_columns
from .errors import SolverDivergence, ValidationError
from .frames import DynamicObject
from .psm import PSMFactors, seed_empty_columns, svd_init, temporal_basis
from .tomo import Sinogram, adjoint_op, fbp_static, forward_op

__all__ = [
    "SolverConfig",
    "SolverState",
    "Problem",
    "Diagnostics",
    "initial_estimate",
    "init_state",
    "lambda_step",
    "psi_step",
    "f_step_efficient",
    "f_step_exact",
    "dual_step",
    "objective_H",
    "augmented_lagrangian",
    "stationarity_residuals",
    "run",
    "DIAG_COLUMNS",
]


@dataclass
class SolverConfig:
    k: int = 3
    d: int = 4
    lam: float = 1e-2
    xi: float = 1e-3
    beta: float = 1e-1
    outer_iters: int = 100
    inner_iters: int = 10
    inner_step: float = 1e-2
    inner_solver: str = "adam"  # adam | gd | cg
    joint: bool = False
    f_step: str = "efficient"  # efficient | exact
    f_inner_iters: int = 200
    f_tol: float = 1e-10
    temporal_basis: str = "dct2"
    init: str = "svd"  # svd | random | zero
    init_window: int = 0  # views per sliding-window FBP frame; 0 = all
    seed: int = 0
    gamma_init: str = "zero"  # zero | consistent
    denoiser: Denoiser = field(default_factory=lambda: GaussianDenoiser(1.0))
    lipschitz_d: float = None
    tol: float = 0.0
    record_timing: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.d < self.k:
            raise ValidationError(f"need d >= k, got d={self.d}, k={self.k}")
        if not self.xi > 0:
            raise ValidationError(f"xi must be > 0, got {self.xi}")
        if not self.beta > 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.inner_solver not in ("adam", "gd", "cg"):
            raise ValidationError(f"unknown inner solver {self.inner_solver!r}")
        if self.joint and self.inner_solver == "cg":
            raise ValidationError("joint basis update is not quadratic; use adam or gd")
        if self.f_step not in ("efficient", "exact"):
            raise ValidationError(f"unknown f step {self.f_step!r}")
        if self.init not in ("svd", "random", "zero"):
            raise ValidationError(f"unknown init {self.init!r}")
        if self.gamma_init not in ("zero", "consistent"):
            raise ValidationError(f"unknown gamma init {self.gamma_init!r}")
        if self.outer_iters < 0 or self.inner_iters < 1:
            raise ValidationError("iteration counts must be positive")
        if self.beta <= 2 * self.big_l:
            warnings.warn(
                f"beta={self.beta:g} <= 2L={2 * self.big_l:g}; convergence guarantee does not apply",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def l_d(self):
        if self.lipschitz_d is not None:
            return float(self.lipschitz_d)
        hint = getattr(self.denoiser, "lipschitz_hint", None)
        return 1.0 if hint is None else float(hint)

    @property
    def big_l(self):
        """Gradient-Lipschitz constant ``lam * (1 + L_D)`` of the weighted prior."""
        return self.lam * (1.0 + self.l_d)


@dataclass
class SolverState:
    lam: np.ndarray
    z: np.ndarray
    f: np.ndarray
    gamma: np.ndarray
    iter: int = 0

    def copy(self):
        return SolverState(self.lam.copy(), self.z.copy(), self.f.copy(), self.gamma.copy(), self.iter)


class Problem:
    """Measured sinogram plus the fixed quantities the steps share."""

    def __init__(self, g, u):
        if not isinstance(g, Sinogram):
            raise ValidationError("expected a Sinogram")
        self.g = g.data
        self.angles = g.angles
        self.n = g.n
        self.p = g.p
        self.u = np.asarray(u, dtype=float)
        if self.u.shape[0] != self.p:
            raise ValidationError(f"temporal basis has {self.u.shape[0]} rows for {self.p} frames")

    def fwd(self, x):
        return forward_op(x, self.angles, self.n)

    def adj(self, y):
        return adjoint_op(y, self.angles, self.n)

    def psi(self, z):
        return self.u @ z


# ---------------------------------------------------------------- subproblems

def s_lambda(prob, state, cfg, lam=None):
    """Value and gradient of the spatial-basis subproblem."""
    lam = state.lam if lam is None else lam
    psi = prob.psi(state.z)
    low = lam @ psi.T
    res = prob.fwd(low) - prob.g
    cons = low - state.f + state.gamma
    val = np.vdot(res, res) + cfg.xi * np.vdot(lam, lam) + 0.5 * cfg.beta * np.vdot(cons, cons)
    grad = 2.0 * prob.adj(res) @ psi + 2.0 * cfg.xi * lam + cfg.beta * cons @ psi
    return float(val), grad


def s_psi(prob, state, cfg, z=None):
    """Value and ``z``-gradient of the temporal subproblem (ridge on ``u z``)."""
    z = state.z if z is None else z
    psi = prob.psi(z)
    low = state.lam @ psi.T
    res = prob.fwd(low) - prob.g
    cons = low - state.f + state.gamma
    val = np.vdot(res, res) + cfg.xi * np.vdot(psi, psi) + 0.5 * cfg.beta * np.vdot(cons, cons)
    gpsi = 2.0 * prob.adj(res).T @ state.lam + 2.0 * cfg.xi * psi + cfg.beta * cons.T @ state.lam
    return float(val), prob.u.T @ gpsi


def s_joint(prob, state, cfg, lam, z):
    psi = prob.psi(z)
    low = lam @ psi.T
    res = prob.fwd(low) - prob.g
    cons = low - state.f + state.gamma
    val = (np.vdot(res, res) + cfg.xi * (np.vdot(lam, lam) + np.vdot(psi, psi))
           + 0.5 * cfg.beta * np.vdot(cons, cons))
    w = 2.0 * prob.adj(res) + cfg.beta * cons
    glam = w @ psi + 2.0 * cfg.xi * lam
    gz = prob.u.T @ (w.T @ lam + 2.0 * cfg.xi * psi)
    return float(val), (glam, gz)


class _Adam:
    def __init__(self, b1=0.9, b2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def propose(self, x, g, lr):
        """Candidate point and the moment state to commit if it is accepted."""
        m = g * (1 - self.b1) if self.m is None else self.b1 * self.m + (1 - self.b1) * g
        v = g * g * (1 - self.b2) if self.v is None else self.b2 * self.v + (1 - self.b2) * g * g
        t = self.t + 1
        mh = m / (1 - self.b1 ** t)
        vh = v / (1 - self.b2 ** t)
        return x - lr * mh / (np.sqrt(vh) + self.eps), (m, v, t)

    def commit(self, moments):
        self.m, self.v, self.t = moments


def minimize(fun, x0, iters, method="adam", step=1e-2):
    """Run ``iters`` steps of a first-order method on ``fun(x) -> (value, grad)``.

    The returned point never has a larger value than ``x0``: a step that
    increases the objective is rejected, the step size halved and (for Adam)
    the moment estimates restarted. ``cg`` assumes ``fun`` is a convex
    quadratic.
    """
    x = x0
    val, grad = fun(x)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    if method == "cg":
        return _cg(fun, x, val, grad, iters)
    lr = step
    adam = _Adam() if method == "adam" else None
    for _ in range(iters):
        for _ in range(40):
            if adam is not None:
                cand, moments = adam.propose(x, grad, lr)
            else:
                cand = x - lr * grad
            cval, cgrad = fun(cand)
            if cval <= val and np.all(np.isfinite(cgrad)):
                break
            lr *= 0.5
            if adam is not None:
                # stale momentum can point uphill; a fresh first step cannot
                adam = _Adam()
        else:
            break
        if adam is not None:
            adam.commit(moments)
            lr = min(1.2 * lr, step)
        else:
            lr *= 1.5
        x, val, grad = cand, cval, cgrad
    return x


def _minimize(fun, x0, cfg):
    return minimize(fun, x0, cfg.inner_iters, cfg.inner_solver, cfg.inner_step)


def _cg(fun, x, val, grad, iters, rtol=1e-13):
    """Conjugate gradient for a quadratic given only its value/gradient oracle."""
    g0 = fun(np.zeros_like(x))[1]
    hv = lambda v: fun(v)[1] - g0  # noqa: E731
    r = -grad
    d = r.copy()
    rr = np.vdot(r, r)
    stop = rtol * max(np.sqrt(np.vdot(g0, g0)), 1e-300)
    for _ in range(iters):
        if math.sqrt(rr) <= stop:
            break
        hd = hv(d)
        dhd = np.vdot(d, hd)
        if dhd <= 0:
            break
        a = rr / dhd
        x = x + a * d
        r = r - a * hd
        rr_new = np.vdot(r, r)
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x


def lambda_step(state, prob, cfg):
    """Approximately minimise the spatial subproblem; returns the new basis."""
    return _minimize(lambda x: s_lambda(prob, state, cfg, lam=x), state.lam, cfg)


def psi_step(state, prob, cfg):
    """Approximately minimise the temporal subproblem; returns the new ``z``."""
    return _minimize(lambda x: s_psi(prob, state, cfg, z=x), state.z, cfg)


def joint_step(state, prob, cfg):
    k = state.lam.size

    def fun(x):
        lam = x[:k].reshape(state.lam.shape)
        z = x[k:].reshape(state.z.shape)
        val, (gl, gz) = s_joint(prob, state, cfg, lam, z)
        return val, np.concatenate([gl.ravel(), gz.ravel()])

    x = _minimize(fun, np.concatenate([state.lam.ravel(), state.z.ravel()]), cfg)
    return x[:k].reshape(state.lam.shape), x[k:].reshape(state.z.shape)


def _check_weights(cfg):
    if cfg.lam + cfg.beta == 0:
        raise ValidationError("lambda + beta must be positive")


def f_step_efficient(state, prob, cfg):
    """One denoiser call per frame: convex combination of ``D(f)`` and the target."""
    _check_weights(cfg)
    target = state.lam @ prob.psi(state.z).T + state.gamma
    if cfg.lam == 0:
        return target
    a = cfg.lam / (cfg.lam + cfg.beta)
    b = cfg.beta / (cfg.lam + cfg.beta)
    return a * denoise_columns(cfg.denoiser, state.f, prob.n) + b * target


def f_step_exact(state, prob, cfg):
    """Gradient descent on ``lam*rho_bar(f) + beta/2 |target - f|^2``.

    Step ``1/(lam (1 + L_D) + beta)``; stops after ``f_inner_iters`` steps or
    when the gradient norm drops below ``f_tol``.
    """
    _check_weights(cfg)
    target = state.lam @ prob.psi(state.z).T + state.gamma
    step = 1.0 / (cfg.lam * (1.0 + cfg.l_d) + cfg.beta)
    f = state.f.copy()
    for _ in range(cfg.f_inner_iters):
        grad = cfg.beta * (f - target)
        if cfg.lam:
            grad += cfg.lam * (f - denoise_columns(cfg.denoiser, f, prob.n))
        if math.sqrt(np.vdot(grad, grad)) < cfg.f_tol:
            break
        f = f - step * grad
    return f


def dual_step(state, prob):
    """Scaled dual ascent on the constraint ``f = lam psi^T``."""
    return state.gamma + (state.lam @ prob.psi(state.z).T - state.f)


# ---------------------------------------------------------------- diagnostics

def _pieces(state, prob, cfg):
    psi = prob.psi(state.z)
    low = state.lam @ psi.T
    res = prob.fwd(low) - prob.g
    den_f = denoise_columns(cfg.denoiser, state.f, prob.n) if cfg.lam else None
    return psi, low, res, den_f


def _h(state, cfg, psi, res, den_f):
    rho = 0.5 * np.vdot(state.f, state.f - den_f) if den_f is not None else 0.0
    return float(np.vdot(res, res) + cfg.lam * rho
                 + cfg.xi * (np.vdot(state.lam, state.lam) + np.vdot(psi, psi)))


def objective_H(state, prob, cfg):
    """Data fit of the low-rank part + weighted RED prior on ``f`` + ridge terms."""
    psi, _, res, den_f = _pieces(state, prob, cfg)
    return _h(state, cfg, psi, res, den_f)


def _lagr(state, cfg, h, low):
    gap = low - state.f
    return float(h + cfg.beta * np.vdot(state.gamma, gap) + 0.5 * cfg.beta * np.vdot(gap, gap))


def augmented_lagrangian(state, prob, cfg):
    psi, low, res, den_f = _pieces(state, prob, cfg)
    return _lagr(state, cfg, _h(state, cfg, psi, res, den_f), low)


def _residuals(state, prob, cfg, psi, low, res, den_f):
    grad_rho = state.f - den_f if den_f is not None else np.zeros_like(state.f)
    r_f = cfg.lam * grad_rho - cfg.beta * state.gamma
    w = 2.0 * prob.adj(res) + cfg.beta * state.gamma
    r_lam = w @ psi + 2.0 * cfg.xi * state.lam
    r_psi = prob.u.T @ (w.T @ state.lam + 2.0 * cfg.xi * psi)
    return (
        float(np.linalg.norm(r_f)),
        float(np.linalg.norm(r_lam)),
        float(np.linalg.norm(r_psi)),
        float(np.linalg.norm(low - state.f)),
    )


def stationarity_residuals(state, prob, cfg):
    """Norms of the Lagrangian gradients in ``f``, ``lam``, ``z`` and the gap.

    The temporal residual is taken with respect to ``z`` (the gradient in
    ``psi`` projected onto the span of ``u``), since ``psi = u z`` is the
    optimisation variable.
    """
    psi, low, res, den_f = _pieces(state, prob, cfg)
    return _residuals(state, prob, cfg, psi, low, res, den_f)


DIAG_COLUMNS = (
    "iter", "H", "lagrangian", "gap",
    "res_f", "res_lam", "res_psi", "res_gap",
    "fit", "wall_ms",
    "diff_f", "diff_lam", "diff_psi", "diff_gamma",
    "norm_f", "norm_lam", "norm_psi", "norm_gamma",
    "L", "beta",
)


@dataclass
class Diagnostics:
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DIAG_COLUMNS)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in DIAG_COLUMNS])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            rows = [{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()} for r in rd]
        return cls(rows)


def _record(diag, state, prev, prob, cfg, wall_ms):
    psi, low, res, den_f = _pieces(state, prob, cfg)
    h = _h(state, cfg, psi, res, den_f)
    rf, rl, rp, rg = _residuals(state, prob, cfg, psi, low, res, den_f)

    def dn(a, b):
        return float(np.linalg.norm(a - b)) if prev is not None else 0.0

    prev_psi = prob.psi(prev.z) if prev is not None else None
    row = {
        "iter": state.iter,
        "H": h,
        "lagrangian": _lagr(state, cfg, h, low),
        "gap": rg,
        "res_f": rf,
        "res_lam": rl,
        "res_psi": rp,
        "res_gap": rg,
        "fit": float(np.linalg.norm(res)),
        "wall_ms": float(wall_ms) if cfg.record_timing else float("nan"),
        "diff_f": dn(state.f, prev.f) if prev else 0.0,
        "diff_lam": dn(state.lam, prev.lam) if prev else 0.0,
        "diff_psi": dn(psi, prev_psi) if prev else 0.0,
        "diff_gamma": dn(state.gamma, prev.gamma) if prev else 0.0,
        "norm_f": float(np.linalg.norm(state.f)),
        "norm_lam": float(np.linalg.norm(state.lam)),
        "norm_psi": float(np.linalg.norm(psi)),
        "norm_gamma": float(np.linalg.norm(state.gamma)),
        "L": cfg.big_l,
        "beta": cfg.beta,
    }
    if not all(math.isfinite(v) for k, v in row.items() if k != "wall_ms"):
        raise FloatingPointError("non-finite diagnostics")
    diag.append(row)


# ---------------------------------------------------------------- driver

def initial_estimate(g, window=0):
    """Crude per-frame estimate by sliding-window filtered backprojection.

    Frame ``t`` is the FBP of the ``window`` views nearest in time (all views
    when ``window`` is 0 or >= p).
    """
    p, n = g.p, g.n
    w = p if window <= 0 or window >= p else window
    out = np.empty((n * n, p))
    cache = {}
    for t in range(p):
        lo = min(max(0, t - w // 2), p - w)
        if lo not in cache:
            sub = Sinogram(g.data[:, lo:lo + w], g.angles[lo:lo + w])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cache[lo] = fbp_static(sub).data
        out[:, t] = cache[lo]
    return out


def init_state(prob, cfg):
    n2, p, k = prob.n * prob.n, prob.p, cfg.k
    if cfg.init == "svd":
        f0 = initial_estimate(Sinogram(prob.g, prob.angles), cfg.init_window)
        fac = seed_empty_columns(svd_init(f0, k, prob.u), cfg.seed)
        lam, z = fac.lam, fac.z
    elif cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        lam = 0.1 * rng.standard_normal((n2, k))
        z = rng.standard_normal((prob.u.shape[1], k)) / math.sqrt(prob.u.shape[1])
    else:
        lam = np.zeros((n2, k))
        z = np.zeros((prob.u.shape[1], k))
    f = lam @ prob.psi(z).T
    if cfg.gamma_init == "consistent" and cfg.lam:
        # satisfies lam*grad_rho(f0) = beta*gamma0, the f-step optimality relation
        gamma = (cfg.lam / cfg.beta) * (f - denoise_columns(cfg.denoiser, f, prob.n))
    else:
        gamma = np.zeros((n2, p))
    return SolverState(lam, z, f, gamma, 0)


def run(g, cfg, state=None, callback=None):
    """Run the outer ADMM loop.

    Returns ``(factors, f, diagnostics)`` with ``f`` the final
    :class:`DynamicObject`. Row 0 of the diagnostics describes the
    initial point.
    """
    u = temporal_basis(cfg.temporal_basis, g.p, cfg.d)
    prob = Problem(g, u)
    state = init_state(prob, cfg) if state is None else state
    diag = Diagnostics()
    try:
        with np.errstate(over="raise", invalid="raise"):
            _record(diag, state, None, prob, cfg, 0.0)
    except FloatingPointError as exc:
        raise SolverDivergence(f"non-finite initial state: {exc}", diag) from exc
    for i in range(1, cfg.outer_iters + 1):
        t0 = time.perf_counter()
        prev = state.copy()
        try:
            with np.errstate(over="raise", invalid="raise"):
                if cfg.joint:
                    state.lam, state.z = joint_step(state, prob, cfg)
                else:
                    state.lam = lambda_step(state, prob, cfg)
                    state.z = psi_step(state, prob, cfg)
                if cfg.f_step == "exact":
                    state.f = f_step_exact(state, prob, cfg)
                else:
                    state.f = f_step_efficient(state, prob, cfg)
                state.gamma = dual_step(state, prob)
                state.iter = i
                _record(diag, state, prev, prob, cfg, 1e3 * (time.perf_counter() - t0))
        except FloatingPointError as exc:
            raise SolverDivergence(f"non-finite iterate at outer iteration {i}: {exc}", diag) from exc
        if callback is not None:
            callback(state, diag)
        if cfg.tol > 0:
            row = diag.rows[-1]
            scale = max(row["norm_f"], 1e-300)
            if row["gap"] < cfg.tol * scale and row["diff_f"] < cfg.tol * scale:
                break
    factors = PSMFactors(state.lam, state.z, u)
    return factors, DynamicObject(state.f, prob.n), diag


def config_fields():
    return [f.name for f in fields(SolverConfig)]
