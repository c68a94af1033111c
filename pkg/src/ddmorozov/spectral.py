"""SVD factors of the forward matrix, pseudoinverse, truncated SVD and backprojection.

Naming follows ``A x = sum_n s_n <x, u_n> v_n``: the domain vectors u_n are
the columns of ``V`` and the range vectors v_n are the columns of ``U``, so
that ``A = U diag(S) V^T`` as with any SVD routine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NULL_RTOL = 1e-12


class SpectralError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray  # range vectors, columns
    S: np.ndarray  # descending
    V: np.ndarray  # domain vectors, columns
    matrix_hash: str = ""

    @property
    def null_threshold(self) -> float:
        return NULL_RTOL * (self.S[0] if self.S.size else 0.0)

    def mode_mask(self, alpha_trunc: float | None = None) -> np.ndarray:
        keep = self.S > self.null_threshold
        if alpha_trunc is not None:
            keep &= self.S**2 >= alpha_trunc
        return keep

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _matrix(A) -> np.ndarray:
    return np.asarray(getattr(A, "matrix", A), dtype=np.float64)


def compute_svd(A) -> SvdFactors:
    from .forward_nsw import matrix_hash

    M = _matrix(A)
    if not np.all(np.isfinite(M)):
        raise SpectralError(f"non-finite matrix (hash {matrix_hash(M)[:12]})")
    try:
        U, S, Vt = np.linalg.svd(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"SVD did not converge for matrix {matrix_hash(M)[:12]}") from exc
    return SvdFactors(U, S, Vt.T, matrix_hash(M))


def _filtered_apply(svd: SvdFactors, y, keep: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    coef = (y @ svd.U[:, keep]) / svd.S[keep]
    return coef @ svd.V[:, keep].T


def pseudoinverse_apply(svd: SvdFactors, y) -> np.ndarray:
    """``A^+ y`` over the modes above the relative null threshold."""
    return _filtered_apply(svd, y, svd.mode_mask())


def truncated_svd_apply(svd: SvdFactors, y, alpha_trunc: float) -> np.ndarray:
    """Truncated SVD reconstruction keeping modes with ``s_n**2 >= alpha_trunc``."""
    if alpha_trunc < 0:
        raise ValueError("alpha_trunc must be non-negative")
    return _filtered_apply(svd, y, svd.mode_mask(alpha_trunc))


def truncated_svd_many(svd: SvdFactors, y, alphas) -> np.ndarray:
    """``S_alpha(y)`` for every alpha in ``alphas``; shape ``(len(alphas),) + y.shape``.

    Shares one projection onto the range vectors across all truncation levels.
    """
    y = np.asarray(y, dtype=np.float64)
    base = svd.mode_mask()
    coef = (y @ svd.U[:, base]) / svd.S[base]
    s2 = svd.S[base] ** 2
    Vb = svd.V[:, base]
    return np.stack([(coef * (s2 >= a)) @ Vb.T for a in alphas])


def backprojection(A, y) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) @ _matrix(A)
