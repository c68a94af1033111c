"""Learned penalty ``||Phi(x) - x||^2``, the central-difference TV operator, and Bregman diagnostics.

Two factor conventions exist. The solver objective uses
``f(x) = ||Phi(x) - x||^2`` and ``lam * ||L x||_1``; the analysis form carries a
half on the network term. :func:`eval_R` exposes both through ``include_half``.
All functions accept a single signal ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neural


@dataclass
class RegularizerSpec:
    network: neural.NetworkParams | None = None
    lam: float = 0.0
    tv_enabled: bool = False

    def __post_init__(self):
        if self.network is None and not self.tv_enabled:
            raise ValueError("a regularizer needs a network, TV, or both")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @property
    def uses_tv(self) -> bool:
        return self.tv_enabled and self.lam > 0


def tv_apply(x) -> np.ndarray:
    """Central differences with Neumann ghosts ``x[-1] = x[0]``, ``x[d] = x[d-1]``."""
    x = np.asarray(x, dtype=np.float64)
    padded = np.concatenate([x[..., :1], x, x[..., -1:]], axis=-1)
    return 0.5 * (padded[..., 2:] - padded[..., :-2])


def tv_adjoint(u) -> np.ndarray:
    """Exact transpose of :func:`tv_apply`."""
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    # (L x)_k = (x_{k+1} - x_{k-1}) / 2 with clamped indices
    out[..., 1:] += 0.5 * u[..., :-1]
    out[..., -1] += 0.5 * u[..., -1]
    out[..., :-1] -= 0.5 * u[..., 1:]
    out[..., 0] -= 0.5 * u[..., 0]
    return out


def tv_matrix(d: int) -> np.ndarray:
    L = np.zeros((d, d))
    for k in range(d):
        L[k, min(k + 1, d - 1)] += 0.5
        L[k, max(k - 1, 0)] -= 0.5
    return L


def tv_norm(d: int) -> float:
    """Spectral norm of the d x d TV matrix."""
    return float(np.linalg.norm(tv_matrix(d), 2))


def _need_net(spec: RegularizerSpec):
    if spec.network is None:
        raise ValueError("this regularizer has no network term")
    return spec.network


def residual(spec: RegularizerSpec, x) -> np.ndarray:
    return neural.forward(_need_net(spec), x) - np.asarray(x, dtype=np.float64)


def eval_f(spec: RegularizerSpec, x):
    """``||Phi(x) - x||^2`` per signal (no half)."""
    r = residual(spec, x)
    return np.sum(r * r, axis=-1)


def f_and_grad(spec: RegularizerSpec, x):
    """``f(x)`` and ``2 (DPhi(x) - I)^T (Phi(x) - x)`` from one forward/backward pass."""
    x = np.asarray(x, dtype=np.float64)
    store = {}

    def cot(phi):
        store["r"] = phi - x
        return store["r"]

    _, vjp = neural.output_and_vjp(_need_net(spec), x, cot)
    r = store["r"]
    return np.sum(r * r, axis=-1), 2.0 * (vjp - r)


def grad_f(spec: RegularizerSpec, x) -> np.ndarray:
    return f_and_grad(spec, x)[1]


def tv_value(x) -> np.ndarray:
    return np.sum(np.abs(tv_apply(x)), axis=-1)


def eval_R(spec: RegularizerSpec, x, include_half: bool = False):
    x = np.asarray(x, dtype=np.float64)
    net = 0.0
    if spec.network is not None:
        net = eval_f(spec, x)
        if include_half:
            net = 0.5 * net
    tv = spec.lam * tv_value(x) if spec.tv_enabled else 0.0
    return net + tv


def bregman_distance(spec: RegularizerSpec, x_star, x):
    """Absolute Bregman distance of the smooth part ``f`` at ``x_star``."""
    x_star = np.asarray(x_star, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    f_star, g_star = f_and_grad(spec, x_star)
    return np.abs(eval_f(spec, x) - f_star - np.sum(g_star * (x - x_star), axis=-1))
