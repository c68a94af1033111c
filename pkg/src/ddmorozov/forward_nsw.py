"""Dissipation kernel of the single-relaxation NSW attenuation law and the dense forward matrix.

Conventions: the Fourier transform is ``F(f)(w) = int f(t) exp(i w t) dt``, so a
delay by ``r`` multiplies by ``exp(i w r)``. The kernel column for distance ``r``
is recovered on the FFT time grid ``t_n = n dt`` (period ``n_omega * dt``) by

    m(t_n, r) = 1 / (n_omega dt) * sum_k F(m(., r))(w_k) exp(-i w_k t_n).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container

log = logging.getLogger(__name__)

DEFAULT_N_OMEGA = 2**14
IMAG_TOL = 1e-6
OPERATOR_KIND = b"OPER"


class KernelAccuracyError(RuntimeError):
    """The inverse transform left a non-negligible imaginary part."""


@dataclass(frozen=True)
class NswParams:
    c0: float = 1.0
    tau1: float = 1e-4
    c_inf: float = 1.41
    T: float = 0.1
    d: int = 601

    def validate(self, allow_lossless: bool = False):
        ok_speed = 0 < self.c0 <= self.c_inf if allow_lossless else 0 < self.c0 < self.c_inf
        if not (ok_speed and self.tau1 > 0 and self.T > 0 and self.d >= 2):
            raise ValueError(f"invalid NSW parameters {self}")

    @property
    def dt(self) -> float:
        return self.T / (self.d - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.d) * self.dt


def attenuation_alpha(omega, params: NswParams):
    """Complex attenuation ``alpha(w)``; principal square-root branch."""
    w = np.asarray(omega, dtype=np.float64)
    s = -1j * params.tau1 * w
    q = (params.c0 / params.c_inf) ** 2
    root = np.sqrt((1 + q * s) / (1 + s))
    return (-1j * w) / params.c_inf * (params.c_inf / params.c0 * root - 1)


def dc_ratio_limit(params: NswParams) -> float:
    """Limit of ``w / (w/c0 + i alpha(w))`` as ``w -> 0``.

    With ``alpha(w) = -i w (1/c0 - 1/c_inf) + O(w^2)`` the denominator is
    ``w (2/c0 - 1/c_inf) + O(w^2)``.
    """
    return 1.0 / (2.0 / params.c0 - 1.0 / params.c_inf)


def kernel_transform(omega, r: float, params: NswParams, alpha=None):
    """Fourier transform of the kernel column ``m(., r)``.

    ``alpha`` replaces :func:`attenuation_alpha` when given (a callable of
    ``omega``); ``lambda w: 0 * w`` gives the lossless kernel.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    w = np.asarray(omega, dtype=np.float64)
    a = attenuation_alpha(w, params) if alpha is None else np.asarray(alpha(w), dtype=np.complex128)
    k = w / params.c0 + 1j * a
    zero = w == 0
    safe_k = np.where(zero, 1.0, k)
    ratio = np.where(zero, dc_ratio_limit(params) if alpha is None else params.c0, w / safe_k)
    return ratio * np.exp(1j * k * abs(r))


def frequency_grid(dt: float, n_omega: int = DEFAULT_N_OMEGA) -> np.ndarray:
    """FFT-ordered angular frequencies spanning [-pi/dt, pi/dt)."""
    return 2 * np.pi * np.fft.fftfreq(n_omega, d=dt)


def _columns(rs, params: NswParams, n_omega: int, alpha=None, chunk: int = 64):
    """Full-period kernel samples for several ``r``; returns (real part, max relative imag residue)."""
    w = frequency_grid(params.dt, n_omega)
    rs = np.atleast_1d(np.asarray(rs, dtype=np.float64))
    out = np.empty((rs.size, n_omega))
    worst = 0.0
    nyq = n_omega // 2
    for start in range(0, rs.size, chunk):
        r = rs[start : start + chunk, None]
        a = attenuation_alpha(w, params) if alpha is None else np.asarray(alpha(w), dtype=np.complex128)
        k = w / params.c0 + 1j * a
        zero = w == 0
        ratio = np.where(zero, dc_ratio_limit(params) if alpha is None else params.c0, w / np.where(zero, 1.0, k))
        spec = ratio * np.exp(1j * k * r)
        # the -pi/dt bin has no partner in an even-length grid; keep its symmetric (real) part
        spec[:, nyq] = spec[:, nyq].real
        m = np.fft.fft(spec, axis=1) / (n_omega * params.dt)
        scale = np.maximum(np.abs(m.real).max(axis=1), np.finfo(float).tiny)
        worst = max(worst, float((np.abs(m.imag).max(axis=1) / scale).max()))
        out[start : start + chunk] = m.real
    return out, worst


def kernel_row(r: float, params: NswParams, n_omega: int = DEFAULT_N_OMEGA, alpha=None, full: bool = False,
               tol: float = IMAG_TOL) -> np.ndarray:
    """Samples of ``m(t, r)`` on the time grid (``full`` keeps the whole FFT period)."""
    if r < 0:
        raise ValueError("r must be non-negative")
    vals, resid = _columns([r], params, n_omega, alpha)
    if resid > tol:
        raise KernelAccuracyError(f"imaginary residue {resid:.3e} > {tol:.1e}; frequency grid too coarse")
    return vals[0] if full else vals[0, : params.d]


def trapezoid_weights(d: int, dt: float) -> np.ndarray:
    w = np.full(d, dt)
    w[0] = w[-1] = dt / 2
    return w


@dataclass
class OperatorModel:
    matrix: np.ndarray
    params: NswParams = field(default_factory=NswParams)
    n_omega: int = DEFAULT_N_OMEGA
    imag_residue: float = 0.0
    svd: object = None

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return self.params.grid

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) @ self.matrix.T

    def adjoint(self, y):
        return np.asarray(y, dtype=np.float64) @ self.matrix

    @property
    def hash(self) -> str:
        return matrix_hash(self.matrix)

    def with_svd(self):
        from .spectral import compute_svd

        if self.svd is None:
            self.svd = compute_svd(self.matrix)
        return self


def matrix_hash(matrix: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(matrix, dtype="<f8").tobytes()).hexdigest()


def assemble_operator(params: NswParams | None = None, n_omega: int = DEFAULT_N_OMEGA, alpha=None,
                      tol: float = IMAG_TOL) -> OperatorModel:
    """``A[k, l] = w_l m(t_k, t_l)`` with trapezoid weights over the r-grid."""
    params = params or NswParams()
    params.validate(allow_lossless=alpha is not None)
    cols, resid = _columns(params.grid, params, n_omega, alpha)
    log.info("kernel imaginary residue %.3e (n_omega=%d)", resid, n_omega)
    if resid > tol:
        raise KernelAccuracyError(f"imaginary residue {resid:.3e} > {tol:.1e}; frequency grid too coarse")
    # cols[l, k] = m(t_k, t_l)
    matrix = cols[:, : params.d].T * trapezoid_weights(params.d, params.dt)[None, :]
    if not np.all(np.isfinite(matrix)):
        raise KernelAccuracyError("non-finite operator entries")
    return OperatorModel(np.ascontiguousarray(matrix), params, n_omega, resid)


def save_operator(path, op: OperatorModel) -> Path:
    header = {"params": asdict(op.params), "n_omega": op.n_omega, "imag_residue": op.imag_residue,
              "matrix_hash": op.hash, "quadrature": "trapezoid"}
    arrays = {"matrix": op.matrix}
    if op.svd is not None:
        arrays.update(U=op.svd.U, S=op.svd.S, V=op.svd.V)
    write_container(path, OPERATOR_KIND, header, arrays)
    return Path(path)


def load_operator(path) -> OperatorModel:
    from .spectral import SvdFactors

    header, arrays = read_container(path, OPERATOR_KIND)
    op = OperatorModel(arrays["matrix"], NswParams(**header["params"]), header["n_omega"], header["imag_residue"])
    if op.hash != header["matrix_hash"]:
        raise ValueError(f"{path}: matrix hash mismatch")
    if "S" in arrays:
        op.svd = SvdFactors(arrays["U"], arrays["S"], arrays["V"], matrix_hash=op.hash)
    return op


def cached_operator(path, params: NswParams | None = None, n_omega: int = DEFAULT_N_OMEGA) -> OperatorModel:
    """Load the operator (with SVD) from ``path`` if it matches ``params``; otherwise build and store it."""
    params = params or NswParams()
    path = Path(path)
    if path.exists():
        op = load_operator(path)
        if op.params == params and op.n_omega == n_omega and op.svd is not None:
            return op
        log.info("operator cache %s is stale, rebuilding", path)
    op = assemble_operator(params, n_omega).with_svd()
    save_operator(path, op)
    return op
