import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddmorozov import neural
from ddmorozov.regularizer import RegularizerSpec, eval_f, tv_value
from ddmorozov.solvers import (DivergenceError, ReconstructionProblem, SolverConfig, estimate_grad_lipschitz,
                               morozov_solve, morozov_solve_batch, primal_dual_steps, project_ball, prox_conj_ball,
                               prox_conj_l1, soft_threshold, tikhonov_objective, tikhonov_solve, tikhonov_solve_batch)

from oracles import golden_section_projection, kkt_bisection


# --- proximal toolbox ---------------------------------------------------------

def test_projection_inside_and_singleton(rng):
    y = rng.standard_normal(5)
    v = y + 0.1 * rng.standard_normal(5)
    assert np.array_equal(project_ball(v, y, 10.0), v)
    assert np.allclose(project_ball(v, y, 0.0), y)


@pytest.mark.parametrize("seed", range(5))
def test_projection_vs_golden_section(seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(7)
    v = y + 3 * rng.standard_normal(7)
    delta = 0.5
    ref = golden_section_projection(v, y, delta)
    assert np.abs(project_ball(v, y, delta) - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_projection_batch_rowwise(rng):
    Y = rng.standard_normal((3, 4))
    V = Y + 5 * rng.standard_normal((3, 4))
    deltas = np.array([0.1, 1.0, 100.0])
    out = project_ball(V, Y, deltas)
    for i in range(3):
        assert np.allclose(out[i], project_ball(V[i], Y[i], deltas[i]))


def test_prox_conj_l1_cases(rng):
    u = rng.standard_normal(10)
    assert np.all(prox_conj_l1(u, 0.0) == 0)
    small = 0.3 * u / np.abs(u).max()
    assert np.array_equal(prox_conj_l1(small, 0.5), small)
    with pytest.raises(ValueError):
        prox_conj_l1(u, -1.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_prox_conj_l1_moreau_oracle(sigma, rng):
    u = 3 * rng.standard_normal(50)
    lam = 0.7
    ref = u - sigma * soft_threshold(u / sigma, lam / sigma)
    assert np.abs(prox_conj_l1(u, lam) - ref).max() <= 1e-12


def test_prox_conj_ball_trivial_cases(rng):
    y = rng.standard_normal(6)
    assert np.allclose(prox_conj_ball(0.7 * y, 0.7, y, 0.3), 0, atol=1e-15)
    u = rng.standard_normal(6)
    assert np.allclose(prox_conj_ball(u, 2.0, y, 1e6), 0, atol=1e-12)
    with pytest.raises(ValueError):
        prox_conj_ball(u, 0.0, y, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_prox_conj_ball_optimality_condition(seed):
    # p = prox_{s h*}(u) satisfies (u - p) / s = grad h*(p) with h*(q) = <q, y> + delta ||q||
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(6)
    u = 5 * rng.standard_normal(6)
    s, delta = 0.8, 0.4
    p = prox_conj_ball(u, s, y, delta)

    def hstar(q):
        return q @ y + delta * np.linalg.norm(q)

    h = 1e-6
    grad = np.array([(hstar(p + h * e) - hstar(p - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.allclose((u - p) / s, grad, atol=1e-6)


def test_prox_conj_ball_clamp_vs_moreau_consistency(rng):
    y = rng.standard_normal(8)
    u = 4 * rng.standard_normal(8)
    s, delta = 1.3, 0.6
    p = prox_conj_ball(u, s, y, delta)
    # Moreau: u = prox_{s h*}(u) + s prox_{h/s}(u/s), and prox of an indicator is the projection
    assert np.abs(u - (p + s * project_ball(u / s, y, delta))).max() <= 1e-12


def test_prox_firm_nonexpansiveness(rng):
    y = rng.standard_normal(10)
    for _ in range(100):
        u, v = 3 * rng.standard_normal((2, 10))
        assert np.linalg.norm(prox_conj_l1(u, 0.5) - prox_conj_l1(v, 0.5)) <= np.linalg.norm(u - v) + 1e-15
        assert (np.linalg.norm(prox_conj_ball(u, 0.7, y, 0.5) - prox_conj_ball(v, 0.7, y, 0.5))
                <= np.linalg.norm(u - v) + 1e-12)


# --- step sizes -----------------------------------------------------------------

def test_lipschitz_estimate_exact_for_quadratics(rng):
    d = 12
    M = rng.standard_normal((d, d)) / 3
    spec = RegularizerSpec(neural.dense_linear_params(M))
    K = M - np.eye(d)
    true = 2 * np.linalg.norm(K.T @ K, 2)
    est = estimate_grad_lipschitz(spec, rng.standard_normal((2, d)), iters=200)
    assert np.allclose(est, true, rtol=1e-3)


def test_step_rule_satisfies_sufficient_condition():
    lf, beta = np.array([0.0, 3.0, 50.0]), 1.7
    tau, sig = primal_dual_steps(lf, beta)
    assert np.all(1 / tau - sig * beta > lf / 2)


# --- Morozov ------------------------------------------------------------------------

def test_identity_operator_zero_radius_pins_data(rng):
    d = 16
    y = rng.standard_normal(d)
    spec = RegularizerSpec(neural.init_params(neural.ArchSpec(input_length=d, depth=1, base_channels=2)))
    res = morozov_solve(ReconstructionProblem(np.eye(d), y, 0.0, spec), SolverConfig(max_iters=3000))
    assert np.abs(res.x - y).max() < 1e-8


def _convex_instance(seed, d=20):
    rng = np.random.default_rng(seed)
    A = np.eye(d) + 0.2 * rng.standard_normal((d, d)) / np.sqrt(d)
    M = 0.6 * rng.standard_normal((d, d)) / np.sqrt(d)
    x_true = rng.standard_normal(d)
    y = A @ x_true
    delta = 0.3 * np.linalg.norm(y)
    return A, M, y, delta


@pytest.mark.parametrize("seed", range(3))
def test_convex_instance_matches_kkt_oracle(seed):
    A, M, y, delta = _convex_instance(seed)
    K = M - np.eye(A.shape[0])
    x_ref, mu = kkt_bisection(K, A, y, delta)
    spec = RegularizerSpec(neural.dense_linear_params(M))
    res = morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(max_iters=20000, objective_tol=1e-12))
    obj = float(eval_f(spec, res.x))
    ref = float(np.sum((K @ x_ref) ** 2))
    assert abs(obj - ref) <= 1e-4 * max(1.0, ref)
    assert np.linalg.norm(A @ res.x - y) <= delta * (1 + 1e-6)
    # KKT: grad f + 2 mu A^T (A x - y) = 0 with the multiplier fitted at x_out
    g = 2 * K.T @ K @ res.x
    n = 2 * A.T @ (A @ res.x - y)
    mu_hat = -(g @ n) / (n @ n)
    assert np.linalg.norm(g + mu_hat * n) < 1e-6
    assert mu_hat >= 0


def test_convex_objective_monotone_after_burn_in():
    A, M, y, delta = _convex_instance(0)
    spec = RegularizerSpec(neural.dense_linear_params(M))
    res = morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(max_iters=3000))
    obj = np.array(res.objective[100:])
    assert np.all(np.diff(obj) <= 1e-8)


def test_converged_runs_are_feasible():
    A, M, y, delta = _convex_instance(1)
    spec = RegularizerSpec(neural.dense_linear_params(M), 0.05, True)
    res = morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(max_iters=20000, objective_tol=1e-10))
    assert res.converged
    assert np.linalg.norm(A @ res.x - y) <= delta * (1 + 1e-6)


def test_tv_only_morozov_feasible(rng):
    A, _, y, delta = _convex_instance(2)
    spec = RegularizerSpec(None, 0.1, True)
    res = morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(max_iters=5000))
    assert np.linalg.norm(A @ res.x - y) <= delta * (1 + 1e-4)
    assert tv_value(res.x) < tv_value(np.linalg.solve(A, y))


def test_batch_equals_single_solves():
    A, M, y, delta = _convex_instance(0)
    spec = RegularizerSpec(neural.dense_linear_params(M), 0.05, True)
    Y = np.stack([y, 0.5 * y])
    cfg = SolverConfig(max_iters=300)
    batch = morozov_solve_batch(A, Y, [delta, delta / 2], spec, np.zeros((2, 20)), cfg)
    single = morozov_solve(ReconstructionProblem(A, 0.5 * y, delta / 2, spec), cfg)
    assert np.allclose(batch[1].x, single.x, atol=1e-12)
    assert batch[1].iterations_used == single.iterations_used


def test_divergence_is_reported():
    A, M, y, delta = _convex_instance(0)
    spec = RegularizerSpec(neural.dense_linear_params(M))
    with pytest.raises(DivergenceError) as err, np.errstate(all="ignore"):
        morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(tau=1e200, sigma_dual=1e200))
    assert err.value.trace


def test_problem_validation():
    with pytest.raises(ValueError):
        ReconstructionProblem(np.eye(3), np.zeros(3), -1.0, RegularizerSpec(None, 1.0, True))
    with pytest.raises(ValueError):
        ReconstructionProblem(np.eye(3), np.zeros(4), 1.0, RegularizerSpec(None, 1.0, True))
    with pytest.raises(ValueError):
        SolverConfig(rho=2.0)


def test_trace_csv(tmp_path):
    A, M, y, delta = _convex_instance(0)
    res = morozov_solve(ReconstructionProblem(A, y, delta, RegularizerSpec(neural.dense_linear_params(M))),
                        SolverConfig(max_iters=10))
    lines = res.write_trace(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,constraint_residual,step_norm" and len(lines) == 11


# --- Tikhonov --------------------------------------------------------------------------

def test_tikhonov_least_squares_matches_normal_equations(rng):
    d = 10
    A = np.eye(d) + 0.1 * rng.standard_normal((d, d))
    y = rng.standard_normal(d)
    spec = RegularizerSpec(None, 0.0, True)
    res = tikhonov_solve(ReconstructionProblem(A, y, 0.0, spec), 0.0, SolverConfig(max_iters=5000))
    ref = np.linalg.solve(A.T @ A, A.T @ y)
    assert np.abs(res.x - ref).max() < 1e-4


def test_tikhonov_zero_data_stays_zero():
    d = 12
    spec = RegularizerSpec(neural.init_params(neural.ArchSpec(input_length=d, depth=1, base_channels=2)), 0.1, True)
    res = tikhonov_solve(ReconstructionProblem(np.eye(d), np.zeros(d), 0.0, spec), 1.0, SolverConfig(max_iters=50))
    assert np.all(res.x == 0)


def test_tikhonov_nett_decreases_objective(rng):
    A, M, y, _ = _convex_instance(3)
    spec = RegularizerSpec(neural.dense_linear_params(M))
    prob = ReconstructionProblem(A, y, 0.0, spec)
    short = tikhonov_solve(prob, 0.5, SolverConfig(max_iters=2000, objective_tol=0))
    res = tikhonov_solve(prob, 0.5, SolverConfig(max_iters=20000, objective_tol=0))
    start = tikhonov_objective(A, y[None], spec, 0.5, np.zeros((1, 20)))[0]
    end = tikhonov_objective(A, y[None], spec, 0.5, res.x[None])[0]
    assert end < start
    # quadratic problem: closed form; term-by-term steps carry an O(step) bias that decays like 1/k
    K = M - np.eye(20)
    ref = np.linalg.solve(A.T @ A + 2 * 0.5 * K.T @ K, A.T @ y)
    err_short, err = np.abs(short.x - ref).max(), np.abs(res.x - ref).max()
    assert err < 1e-3
    assert err < err_short / 5


def test_tikhonov_negative_alpha_rejected():
    with pytest.raises(ValueError):
        tikhonov_solve_batch(np.eye(2), np.zeros((1, 2)), RegularizerSpec(None, 1.0, True), np.zeros((1, 2)), -1.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), radius=st.floats(0.05, 0.6))
def test_morozov_output_feasible_on_random_convex_instances(seed, radius):
    A, M, y, _ = _convex_instance(seed, d=8)
    delta = radius * np.linalg.norm(y)
    spec = RegularizerSpec(neural.dense_linear_params(M))
    res = morozov_solve(ReconstructionProblem(A, y, delta, spec), SolverConfig(max_iters=4000, objective_tol=1e-11))
    assert np.linalg.norm(A @ res.x - y) <= delta * (1 + 1e-5)
