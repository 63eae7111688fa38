import warnings

import numpy as np
import pytest

from redpsm import DynamicObject, SolverDivergence, ValidationError
from redpsm.denoisers import Denoiser, GaussianDenoiser
from redpsm.phantom import acquire, bit_reversed_angles, disc, shepp_logan, warp_phantom
from redpsm.psm import compose, temporal_basis
from redpsm.red import grad_rho_bar, rho_bar
from redpsm.solver import (
    Diagnostics,
    Problem,
    SolverConfig,
    SolverState,
    augmented_lagrangian,
    dual_step,
    f_step_efficient,
    f_step_exact,
    init_state,
    lambda_step,
    minimize,
    objective_H,
    psi_step,
    run,
    s_lambda,
    stationarity_residuals,
)
from redpsm.tomo import Sinogram, forward_op


class Scale(Denoiser):
    def __init__(self, c):
        self.c = c
        self.lipschitz_hint = abs(c)

    def apply(self, image):
        return self.c * image


def instance(seed=0, n=6, p=5, k=2, d=3, **cfg):
    rng = np.random.default_rng(seed)
    g = Sinogram(rng.standard_normal((n, p)), rng.uniform(0, np.pi, p))
    prob = Problem(g, temporal_basis("dct2", p, d))
    state = SolverState(
        rng.standard_normal((n * n, k)),
        rng.standard_normal((d, k)),
        rng.standard_normal((n * n, p)),
        rng.standard_normal((n * n, p)),
    )
    base = dict(k=k, d=d, lam=0.2, xi=0.3, beta=2.0)
    base.update(cfg)
    return prob, state, SolverConfig(**base)


# ---------------------------------------------------------------- config

def test_config_validation():
    for bad in (dict(k=0), dict(k=3, d=2), dict(xi=0.0), dict(beta=0.0), dict(lam=-1.0),
                dict(inner_solver="lbfgs"), dict(f_step="slow"), dict(init="ones"),
                dict(gamma_init="random"), dict(inner_iters=0), dict(joint=True, inner_solver="cg")):
        with pytest.raises(ValidationError):
            SolverConfig(**bad)


def test_small_beta_warns_only():
    with pytest.warns(RuntimeWarning, match="convergence guarantee"):
        cfg = SolverConfig(lam=1.0, beta=1.0)
    assert cfg.big_l == 2.0


def test_walnut_config_accepted():
    # beta = 2L exactly, so the guarantee warning fires but the config is valid
    with pytest.warns(RuntimeWarning):
        cfg = SolverConfig(k=10, d=11, lam=5e-5, beta=1e-4, xi=1e-1)
    assert cfg.big_l == pytest.approx(1e-4)


# ---------------------------------------------------------------- lambda / z steps

def test_lambda_step_with_zero_psi_shrinks():
    prob, state, cfg = instance(inner_iters=50)
    state.z[:] = 0.0
    new = lambda_step(state, prob, cfg)
    assert np.linalg.norm(new) < np.linalg.norm(state.lam)
    cg = lambda_step(state, prob, SolverConfig(k=2, d=3, lam=0.2, xi=0.3, beta=2.0, inner_solver="cg"))
    assert np.linalg.norm(cg) < 1e-10


def test_lambda_step_scalar_closed_form():
    rng = np.random.default_rng(1)
    p = 4
    angles = rng.uniform(0, np.pi, p)
    g = Sinogram(rng.standard_normal((1, p)), angles)
    prob = Problem(g, np.eye(p))
    psi = rng.standard_normal((p, 1))
    state = SolverState(np.array([[0.3]]), psi.copy(), rng.standard_normal((1, p)), rng.standard_normal((1, p)))
    cfg = SolverConfig(k=1, d=p, lam=0.0, xi=0.4, beta=1.5, inner_solver="cg", inner_iters=5)
    a = forward_op(np.ones((1, p)), angles, 1)[0]  # per-view gain of the single pixel
    ps, gg = psi[:, 0], g.data[0]
    tgt = state.f[0] - state.gamma[0]
    ref = (2 * np.sum(a * ps * gg) + cfg.beta * np.sum(ps * tgt)) / (
        2 * np.sum(a * a * ps * ps) + 2 * cfg.xi + cfg.beta * np.sum(ps * ps))
    assert abs(lambda_step(state, prob, cfg)[0, 0] - ref) < 1e-6
    adam = SolverConfig(k=1, d=p, lam=0.0, xi=0.4, beta=1.5, inner_iters=3000, inner_step=0.05)
    assert abs(lambda_step(state, prob, adam)[0, 0] - ref) < 1e-6


@pytest.mark.parametrize("solver", ["adam", "gd", "cg"])
def test_inner_steps_never_increase_subproblem(solver):
    prob, state, cfg = instance(seed=2, inner_solver=solver, inner_iters=15)
    before = s_lambda(prob, state, cfg)[0]
    state.lam = lambda_step(state, prob, cfg)
    assert s_lambda(prob, state, cfg)[0] <= before


def test_psi_step_with_zero_lambda_shrinks():
    prob, state, cfg = instance(seed=3, inner_iters=50)
    state.lam[:] = 0.0
    assert np.linalg.norm(psi_step(state, prob, cfg)) < np.linalg.norm(state.z)


def test_psi_step_identity_basis_is_direct_psi_optimisation():
    n, p, k = 5, 4, 2
    prob, state, cfg = instance(seed=4, n=n, p=p, k=k, d=p, inner_iters=30)
    prob.u = np.eye(p)

    def direct(psi_flat):
        psi = psi_flat.reshape(p, k)
        low = state.lam @ psi.T
        res = forward_op(low, prob.angles, n) - prob.g
        cons = low - state.f + state.gamma
        val = np.vdot(res, res) + cfg.xi * np.vdot(psi, psi) + 0.5 * cfg.beta * np.vdot(cons, cons)
        from redpsm.tomo import adjoint_op
        grad = 2 * adjoint_op(res, prob.angles, n).T @ state.lam + 2 * cfg.xi * psi + cfg.beta * cons.T @ state.lam
        return float(val), grad.ravel()

    ref = minimize(direct, state.z.ravel(), cfg.inner_iters, "adam", cfg.inner_step).reshape(p, k)
    assert np.max(np.abs(psi_step(state, prob, cfg) - ref)) < 1e-8


# ---------------------------------------------------------------- f steps

def test_efficient_f_step_formulas():
    prob, state, cfg = instance(seed=5, lam=0.0)
    target = state.lam @ prob.psi(state.z).T + state.gamma
    assert np.array_equal(f_step_efficient(state, prob, cfg), target)

    _, _, eq = instance(seed=5, lam=1.0, beta=1.0, denoiser=Scale(1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = f_step_efficient(state, prob, eq)
    assert np.allclose(out, 0.5 * state.f + 0.5 * target, atol=1e-14)

    _, _, gs = instance(seed=5, lam=0.3, beta=2.0)
    den = GaussianDenoiser(1.0)
    ref = np.empty_like(state.f)
    for t in range(state.f.shape[1]):
        dt = den(state.f[:, t].reshape(6, 6)).ravel()
        ref[:, t] = 0.3 / 2.3 * dt + 2.0 / 2.3 * target[:, t]
    assert np.max(np.abs(f_step_efficient(state, prob, gs) - ref)) < 1e-12


def test_efficient_weights_sum_to_one():
    for lam, beta in [(0.1, 0.5), (3.0, 7.0), (1e-5, 1e-4)]:
        assert lam / (lam + beta) + beta / (lam + beta) == 1.0


def test_exact_f_step_lambda_zero_one_step():
    prob, state, cfg = instance(seed=6, lam=0.0, f_inner_iters=1)
    target = state.lam @ prob.psi(state.z).T + state.gamma
    assert np.allclose(f_step_exact(state, prob, cfg), target, atol=1e-14)
    _, _, ident = instance(seed=6, lam=0.5, beta=4.0, denoiser=Scale(1.0), f_inner_iters=200)
    assert np.allclose(f_step_exact(state, prob, ident), target, atol=1e-10)


def test_exact_f_step_half_identity_closed_form():
    prob, state, _ = instance(seed=7)
    lam, beta = 0.8, 2.0
    cfg = SolverConfig(k=2, d=3, lam=lam, beta=beta, xi=0.3, denoiser=Scale(0.5), f_inner_iters=500)
    target = state.lam @ prob.psi(state.z).T + state.gamma
    ref = beta * target / (lam / 2 + beta)
    assert np.max(np.abs(f_step_exact(state, prob, cfg) - ref)) < 1e-6


def test_exact_f_step_decreases_objective():
    prob, state, cfg = instance(seed=8, lam=0.5, beta=3.0, f_inner_iters=5)
    den = cfg.denoiser
    target = state.lam @ prob.psi(state.z).T + state.gamma

    def s_f(f):
        return cfg.lam * rho_bar(f, den, 6) + 0.5 * cfg.beta * np.vdot(target - f, target - f)

    assert s_f(f_step_exact(state, prob, cfg)) <= s_f(state.f)


# ---------------------------------------------------------------- dual, H, L, residuals

def test_dual_step():
    prob, state, _ = instance(seed=9)
    low = state.lam @ prob.psi(state.z).T
    assert np.max(np.abs(dual_step(state, prob) - (state.gamma + low - state.f))) < 1e-15
    state.f = low.copy()
    assert np.array_equal(dual_step(state, prob), state.gamma)
    state.f[:] = 0.0
    state.gamma[:] = 0.0
    assert np.array_equal(dual_step(state, prob), low)


def _zero_instance():
    n, p, k, d = 4, 3, 1, 2
    g = Sinogram(np.zeros((n, p)), [0.0, 1.0, 2.0])
    prob = Problem(g, temporal_basis("dct2", p, d))
    state = SolverState(np.zeros((n * n, k)), np.zeros((d, k)), np.zeros((n * n, p)), np.zeros((n * n, p)))
    return prob, state, SolverConfig(k=k, d=d, lam=0.1, beta=1.0)


def test_zero_state_zero_everything():
    prob, state, cfg = _zero_instance()
    assert objective_H(state, prob, cfg) == 0.0
    assert augmented_lagrangian(state, prob, cfg) == 0.0
    assert stationarity_residuals(state, prob, cfg) == (0.0, 0.0, 0.0, 0.0)


def test_objective_term_by_term():
    prob, state, cfg = instance(seed=10, lam=0.0)
    psi = prob.psi(state.z)
    res = forward_op(state.lam @ psi.T, prob.angles, 6) - prob.g
    ref = np.sum(res ** 2) + cfg.xi * (np.sum(state.lam ** 2) + np.sum(psi ** 2))
    assert abs(objective_H(state, prob, cfg) - ref) < 1e-12 * ref
    _, _, with_red = instance(seed=10, lam=0.7)
    ref_red = ref + 0.7 * rho_bar(state.f, with_red.denoiser, 6)
    assert abs(objective_H(state, prob, with_red) - ref_red) < 1e-12 * ref_red


def test_objective_ridge_homogeneity():
    prob, state, cfg = instance(seed=11, lam=0.0)
    _, _, double = instance(seed=11, lam=0.0, xi=2 * cfg.xi)
    _, _, tiny = instance(seed=11, lam=0.0, xi=1e-300)
    fit = objective_H(state, prob, tiny)
    ridge = objective_H(state, prob, cfg) - fit
    assert objective_H(state, prob, double) - fit == pytest.approx(2 * ridge, rel=1e-12)


def test_lagrangian_identities():
    prob, state, cfg = instance(seed=12, lam=0.4)
    low = state.lam @ prob.psi(state.z).T
    h = objective_H(state, prob, cfg)
    gap = low - state.f
    ref = h + cfg.beta * np.vdot(state.gamma, gap) + 0.5 * cfg.beta * np.vdot(gap, gap)
    assert abs(augmented_lagrangian(state, prob, cfg) - ref) < 1e-12 * abs(ref)

    zero_dual = SolverState(state.lam, state.z, state.f, np.zeros_like(state.gamma))
    assert augmented_lagrangian(zero_dual, prob, cfg) == pytest.approx(
        objective_H(zero_dual, prob, cfg) + 0.5 * cfg.beta * np.vdot(gap, gap), rel=1e-13)

    feasible = SolverState(state.lam, state.z, low.copy(), state.gamma)
    assert augmented_lagrangian(feasible, prob, cfg) == pytest.approx(objective_H(feasible, prob, cfg), rel=1e-14)


def test_f_residual_direct_formula():
    prob, state, cfg = instance(seed=13, lam=0.6)
    ref = np.linalg.norm(0.6 * grad_rho_bar(state.f, cfg.denoiser, 6) - cfg.beta * state.gamma)
    assert abs(stationarity_residuals(state, prob, cfg)[0] - ref) < 1e-12 * ref
    gap = np.linalg.norm(state.lam @ prob.psi(state.z).T - state.f)
    assert stationarity_residuals(state, prob, cfg)[3] == pytest.approx(gap, rel=1e-14)


# ---------------------------------------------------------------- run

def test_zero_sinogram_zero_init_is_fixed_point():
    g = Sinogram(np.zeros((8, 4)), bit_reversed_angles(4).angles)
    factors, f, diag = run(g, SolverConfig(k=2, d=3, init="zero", outer_iters=5))
    assert not np.any(factors.lam) and not np.any(factors.z) and not np.any(f.data)
    assert all(r["H"] == 0.0 and r["lagrangian"] == 0.0 for r in diag.rows)


def test_rank_one_static_noiseless_fit():
    n, p = 16, 8
    truth = DynamicObject.from_frames(np.repeat(disc(n, 0.6)[None], p, axis=0))
    g = acquire(truth, bit_reversed_angles(p), 0.0)
    cfg = SolverConfig(k=1, d=2, lam=0.0, xi=1e-6, beta=1.0, outer_iters=40,
                       inner_solver="cg", inner_iters=50, temporal_basis="dct2")
    factors, _, diag = run(g, cfg)
    fit = diag.column("fit")
    assert np.all(np.diff(fit[1:]) <= 1e-12 * fit[1])
    assert fit[-1] / np.linalg.norm(g.data) < 1e-2
    assert np.linalg.matrix_rank(compose(factors).data, tol=1e-10 * np.abs(compose(factors).data).max()) == 1


def test_diagnostics_recorded_every_iteration_and_bounded():
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 5e-3, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, _, diag = run(g, SolverConfig(k=2, d=4, lam=0.1, beta=1.0, outer_iters=12))
    assert [r["iter"] for r in diag.rows] == list(range(13))
    for col in ("norm_f", "norm_lam", "norm_psi", "norm_gamma"):
        assert np.all(np.isfinite(diag.column(col)))
    assert np.all(np.isnan(diag.column("wall_ms")))


def test_efficient_f_step_eventually_monotone():
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 5e-3, seed=2)
    cfg = SolverConfig(k=2, d=4, lam=0.1, xi=1.0, beta=0.8, outer_iters=100, inner_solver="cg", inner_iters=50)
    _, _, diag = run(g, cfg)
    lag = diag.column("lagrangian")
    tail = lag[len(lag) // 5:]
    assert np.all(np.diff(tail) <= 1e-8 * np.maximum(1.0, np.abs(tail[:-1])))


def test_joint_mode_runs_and_decreases_fit():
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 5e-3, seed=3)
    _, _, diag = run(g, SolverConfig(k=2, d=4, lam=0.05, beta=1.0, xi=0.1, joint=True, outer_iters=20))
    assert diag.column("fit")[-1] < diag.column("fit")[0]


def test_tolerance_stops_early():
    g = Sinogram(np.zeros((8, 4)), bit_reversed_angles(4).angles)
    _, _, diag = run(g, SolverConfig(k=1, d=2, init="random", outer_iters=200, tol=1e-3,
                                     inner_solver="cg", xi=1.0, lam=0.0))
    assert len(diag) < 201


def test_init_modes():
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 0.0)
    prob = Problem(g, temporal_basis("dct2", 8, 4))
    zero = init_state(prob, SolverConfig(k=2, d=4, init="zero"))
    assert not np.any(zero.lam) and not np.any(zero.f)
    a = init_state(prob, SolverConfig(k=2, d=4, init="random", seed=4))
    b = init_state(prob, SolverConfig(k=2, d=4, init="random", seed=4))
    assert np.array_equal(a.lam, b.lam) and np.array_equal(a.z, b.z)
    svd = init_state(prob, SolverConfig(k=2, d=4, lam=0.1, beta=1.0, gamma_init="consistent"))
    assert np.allclose(svd.f, svd.lam @ prob.psi(svd.z).T)
    # consistent dual start satisfies the f-step optimality relation
    assert stationarity_residuals(svd, prob, SolverConfig(k=2, d=4, lam=0.1, beta=1.0))[0] < 1e-12


def test_divergence_raises_with_diagnostics():
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 0.0)
    big = Sinogram(g.data * 1e300, g.angles)
    with pytest.raises(SolverDivergence) as info:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run(big, SolverConfig(k=2, d=4, outer_iters=5, inner_solver="gd", inner_step=1e3))
    assert isinstance(info.value.diagnostics, Diagnostics)


def test_diagnostics_csv_round_trip(tmp_path):
    g = acquire(warp_phantom(shepp_logan(16), 8, 1.0), bit_reversed_angles(8), 5e-3, seed=5)
    _, _, diag = run(g, SolverConfig(k=2, d=4, lam=0.1, beta=1.0, outer_iters=4, record_timing=True))
    path = tmp_path / "d.csv"
    diag.to_csv(path)
    back = Diagnostics.from_csv(path)
    for name in ("H", "lagrangian", "gap", "wall_ms"):
        assert np.array_equal(back.column(name), diag.column(name))
    assert np.all(diag.column("wall_ms") >= 0)
