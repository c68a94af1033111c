"""Primal-dual solver for the discrepancy-constrained problem and the Tikhonov baselines.

The constrained problem is

    min_x  ||Phi(x) - x||^2 + lam ||L x||_1 + 1_B(A x),   B = {y : ||y - y_delta|| <= delta},

solved with the relaxed primal-dual iteration of Condat (2013). The Tikhonov
functional ``1/2 ||A x - y||^2 + alpha ||Phi(x) - x||^2 + lam ||L x||_1`` is
minimized by incremental (term-by-term) gradient steps.

Both solvers run a batch of independent problems that share the operator and
the regularizer; each sample keeps its own step sizes and stopping state, so a
batch result equals the corresponding single solves.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import regularizer as reg

log = logging.getLogger(__name__)

STAGNATION_WINDOW = 50


class DivergenceError(FloatingPointError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class ReconstructionProblem:
    operator: object  # OperatorModel or a plain matrix
    y_delta: np.ndarray
    delta: float
    spec: reg.RegularizerSpec
    init: np.ndarray | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        self.y_delta = np.asarray(self.y_delta, dtype=np.float64)
        if self.init is None:
            self.init = np.zeros(_matrix(self.operator).shape[1])
        self.init = np.asarray(self.init, dtype=np.float64)
        if self.y_delta.shape[-1] != _matrix(self.operator).shape[0]:
            raise ValueError("data length does not match the operator")


@dataclass
class SolverConfig:
    """Iteration controls. ``tau``/``sigma_dual`` of ``None`` select the automatic rule."""

    tau: float | None = None
    sigma_dual: float | None = None
    rho: float = 1.0
    max_iters: int = 1000
    feasibility_tol: float = 1e-6
    objective_tol: float = 1e-7
    lipschitz_iters: int = 20
    lipschitz_safety: float = 1.2
    seed: int = 0
    # Tikhonov step schedule c / (1 + k / K)
    step_c: float | None = None
    step_K: float = 100.0

    def __post_init__(self):
        if not 0 < self.rho < 2:
            raise ValueError("rho must lie in (0, 2)")


@dataclass
class SolveResult:
    x: np.ndarray
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    tau: float = float("nan")
    sigma_dual: float = float("nan")
    lipschitz: float = float("nan")

    def write_trace(self, path) -> Path:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "constraint_residual", "step_norm"])
            for i, (o, r, s) in enumerate(zip(self.objective, self.residual, self.step_norm)):
                w.writerow([i, repr(o), repr(r), repr(s)])
        return Path(path)


def _matrix(op) -> np.ndarray:
    return np.asarray(getattr(op, "matrix", op), dtype=np.float64)


def _opnorm(op) -> float:
    svd = getattr(op, "svd", None)
    if svd is not None:
        return float(svd.S[0])
    return float(np.linalg.norm(_matrix(op), 2))


# --- proximal toolbox --------------------------------------------------------

def project_ball(v, y_delta, delta):
    """Projection onto ``{w : ||w - y_delta|| <= delta}`` (row-wise for batches)."""
    v = np.asarray(v, dtype=np.float64)
    diff = v - y_delta
    nrm = np.linalg.norm(diff, axis=-1, keepdims=True)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim and diff.ndim > 1:
        delta = delta.reshape(-1, 1)
    scale = np.where(nrm > delta, delta / np.where(nrm > 0, nrm, 1.0), 1.0)
    return y_delta + scale * diff


def soft_threshold(u, t):
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def prox_conj_l1(u, lam):
    """Prox of the conjugate of ``lam ||.||_1``: clamp to ``[-lam, lam]`` (any step size)."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lam must be non-negative")
    return np.clip(u, -lam, lam)


def prox_conj_ball(u, sigma_dual, y_delta, delta):
    """Prox of ``sigma * h*`` for the ball indicator, via the Moreau identity."""
    sigma_dual = np.asarray(sigma_dual, dtype=np.float64)
    if np.any(sigma_dual <= 0):
        raise ValueError("sigma_dual must be positive")
    u = np.asarray(u, dtype=np.float64)
    return u - sigma_dual * project_ball(u / sigma_dual, y_delta, delta)


# --- step sizes ----------------------------------------------------------------

def estimate_grad_lipschitz(spec: reg.RegularizerSpec, x0, iters: int = 20, seed: int = 0,
                            rel_step: float = 1e-3) -> np.ndarray:
    """Per-sample estimate of the Lipschitz constant of ``grad f`` around ``x0``.

    Power iteration on finite-difference Hessian-vector products
    ``(grad f(x0 + e h) - grad f(x0)) / e``; exact for quadratic ``f``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if spec.network is None:
        return np.zeros(x0.shape[0])
    rng = np.random.default_rng(seed)
    # one probe shared by all rows, so a batched estimate equals the single-sample one
    h = np.tile(rng.standard_normal(x0.shape[1]), (x0.shape[0], 1))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    eps = rel_step * np.maximum(np.linalg.norm(x0, axis=1, keepdims=True), 1.0)
    g0 = reg.grad_f(spec, x0)
    est = np.zeros(x0.shape[0])
    for _ in range(iters):
        hv = (reg.grad_f(spec, x0 + eps * h) - g0) / eps
        est = np.linalg.norm(hv, axis=1)
        h = hv / np.where(est > 0, est, 1.0)[:, None]
        dead = est == 0
        if np.any(dead):
            fresh = rng.standard_normal(x0.shape[1])
            h[dead] = fresh / np.linalg.norm(fresh)
    return est


def primal_dual_steps(lipschitz, beta: float, tau=None, sigma_dual=None):
    """``tau = 0.9 / (L_f/2 + beta)``, ``sigma = 0.99 (1/tau - L_f/2) / beta``.

    Satisfies ``1/tau - sigma * beta > L_f / 2`` with ``beta >= ||[L; A]||^2``,
    the sufficient condition for the relaxed iteration with ``rho <= 1``.
    """
    lf = np.asarray(lipschitz, dtype=np.float64)
    t = 0.9 / (lf / 2 + beta) if tau is None else np.full_like(lf, tau)
    s = 0.99 * (1 / t - lf / 2) / beta if sigma_dual is None else np.full_like(lf, sigma_dual)
    return t, s


# --- Morozov -------------------------------------------------------------------

def _objective(spec, x, fval):
    obj = np.array(fval, dtype=np.float64) if spec.network is not None else np.zeros(x.shape[0])
    if spec.uses_tv:
        obj = obj + spec.lam * reg.tv_value(x)
    return obj


def morozov_solve_batch(operator, Y, deltas, spec: reg.RegularizerSpec, X0, config: SolverConfig | None = None,
                        ) -> list[SolveResult]:
    config = config or SolverConfig()
    A = _matrix(operator)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    X = np.array(np.atleast_2d(X0), dtype=np.float64)
    n, d = X.shape
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), (n,)).copy()
    use_tv = spec.uses_tv
    beta = _opnorm(operator) ** 2 + (reg.tv_norm(d) ** 2 if use_tv else 0.0)
    lip = config.lipschitz_safety * estimate_grad_lipschitz(spec, X, config.lipschitz_iters, config.seed)
    tau, sig = primal_dual_steps(lip, beta, config.tau, config.sigma_dual)
    rho = config.rho

    Y1 = np.zeros((n, d))
    Y2 = np.zeros((n, A.shape[0]))
    results = [SolveResult(X[i].copy(), tau=float(tau[i]), sigma_dual=float(sig[i]), lipschitz=float(lip[i]))
               for i in range(n)]
    quiet = np.zeros(n, dtype=int)
    active = np.arange(n)

    for it in range(config.max_iters):
        if active.size == 0:
            break
        x = X[active]
        t = tau[active, None]
        s = sig[active, None]
        if spec.network is not None:
            fval, g = reg.f_and_grad(spec, x)
        else:
            fval, g = np.zeros(active.size), 0.0
        Ax = x @ A.T
        res = np.linalg.norm(Ax - Y[active], axis=1) - deltas[active]
        obj = _objective(spec, x, fval)

        direction = g + Y2[active] @ A
        if use_tv:
            direction = direction + reg.tv_adjoint(Y1[active])
        z = x - t * direction
        x_new = rho * z + (1 - rho) * x
        v = 2 * z - x
        if use_tv:
            w1 = prox_conj_l1(Y1[active] + s * reg.tv_apply(v), spec.lam)
            Y1[active] = rho * w1 + (1 - rho) * Y1[active]
        w2 = prox_conj_ball(Y2[active] + s * (v @ A.T), s, Y[active], deltas[active])
        Y2[active] = rho * w2 + (1 - rho) * Y2[active]

        step = np.linalg.norm(x_new - x, axis=1)
        if not np.all(np.isfinite(x_new)):
            bad = active[~np.all(np.isfinite(x_new), axis=1)]
            raise DivergenceError(f"non-finite iterate at iteration {it} for samples {bad.tolist()}",
                                  trace=[results[i] for i in bad])
        X[active] = x_new
        rel = step / np.maximum(np.linalg.norm(x, axis=1), 1e-30)
        for k, i in enumerate(active):
            r = results[i]
            r.objective.append(float(obj[k]))
            r.residual.append(float(res[k]))
            r.step_norm.append(float(step[k]))
            r.iterations_used = it + 1
        quiet[active] = np.where(rel < config.objective_tol, quiet[active] + 1, 0)
        active = active[quiet[active] < STAGNATION_WINDOW]

    resid = np.linalg.norm(X @ A.T - Y, axis=1)
    for i, r in enumerate(results):
        r.x = X[i].copy()
        feasible = resid[i] <= deltas[i] * (1 + config.feasibility_tol) + 1e-14
        r.converged = bool(quiet[i] >= STAGNATION_WINDOW and feasible)
    return results


def morozov_solve(problem: ReconstructionProblem, config: SolverConfig | None = None) -> SolveResult:
    return morozov_solve_batch(problem.operator, problem.y_delta[None], [problem.delta], problem.spec,
                               problem.init[None], config)[0]


# --- Tikhonov --------------------------------------------------------------------

def tikhonov_objective(A, Y, spec: reg.RegularizerSpec, alpha_reg: float, X):
    X = np.atleast_2d(X)
    r = X @ A.T - Y
    val = 0.5 * np.sum(r * r, axis=1)
    if spec.network is not None and alpha_reg > 0:
        val = val + alpha_reg * reg.eval_f(spec, X)
    if spec.uses_tv:
        val = val + spec.lam * reg.tv_value(X)
    return val


def tikhonov_solve_batch(operator, Y, spec: reg.RegularizerSpec, X0, alpha_reg: float,
                         config: SolverConfig | None = None) -> list[SolveResult]:
    """Incremental gradient: one step on each term in turn with step ``c / (1 + k / K)``.

    The l1 term uses the subgradient ``L^T sign(L x)`` with ``sign(0) = 0``.
    """
    if alpha_reg < 0:
        raise ValueError("alpha_reg must be non-negative")
    config = config or SolverConfig()
    A = _matrix(operator)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    X = np.array(np.atleast_2d(X0), dtype=np.float64)
    n, d = X.shape
    use_net = spec.network is not None and alpha_reg > 0
    use_tv = spec.uses_tv
    lip = np.zeros(n)
    if use_net:
        lip = config.lipschitz_safety * estimate_grad_lipschitz(spec, X, config.lipschitz_iters, config.seed)
    if config.step_c is None:
        c = 0.9 / np.maximum(_opnorm(operator) ** 2, alpha_reg * lip)
    else:
        c = np.full(n, config.step_c)
    results = [SolveResult(X[i].copy(), tau=float(c[i]), lipschitz=float(lip[i])) for i in range(n)]
    quiet = np.zeros(n, dtype=int)
    active = np.arange(n)

    for it in range(config.max_iters):
        if active.size == 0:
            break
        eta = (c[active] / (1 + it / config.step_K))[:, None]
        x0 = X[active]
        x = x0 - eta * ((x0 @ A.T - Y[active]) @ A)
        if use_net:
            fval, g = reg.f_and_grad(spec, x)
            x = x - eta * alpha_reg * g
        if use_tv:
            x = x - eta * spec.lam * reg.tv_adjoint(np.sign(reg.tv_apply(x)))
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite Tikhonov iterate at iteration {it}")
        r = x0 @ A.T - Y[active]
        obj = 0.5 * np.sum(r * r, axis=1)
        if use_net:
            # network term taken where its gradient was evaluated; saves a forward pass
            obj = obj + alpha_reg * fval
        if use_tv:
            obj = obj + spec.lam * reg.tv_value(x0)
        step = np.linalg.norm(x - x0, axis=1)
        X[active] = x
        for k, i in enumerate(active):
            res = results[i]
            res.objective.append(float(obj[k]))
            res.residual.append(float(np.linalg.norm(r[k])))
            res.step_norm.append(float(step[k]))
            res.iterations_used = it + 1
        rel = step / np.maximum(np.linalg.norm(x0, axis=1), 1e-30)
        quiet[active] = np.where(rel < config.objective_tol, quiet[active] + 1, 0)
        active = active[quiet[active] < STAGNATION_WINDOW]

    for i, res in enumerate(results):
        res.x = X[i].copy()
        res.converged = bool(quiet[i] >= STAGNATION_WINDOW)
    return results


def tikhonov_solve(problem: ReconstructionProblem, alpha_reg: float,
                   config: SolverConfig | None = None) -> SolveResult:
    return tikhonov_solve_batch(problem.operator, problem.y_delta[None], problem.spec, problem.init[None],
                                alpha_reg, config)[0]
