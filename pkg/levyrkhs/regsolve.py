"""GSVD-based Tikhonov regularization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .const import PSD_CLAMP_RTOL, PSD_NEGATIVE_RTOL, RANK_RTOL, SYMMETRY_RTOL
from .exceptions import (
    ConfigurationError,
    DecompositionError,
    NotPositiveSemidefiniteError,
    SolveError,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class GsvdFactors:
    """Generalized SVD of a pair (A, K).

    A = U diag(sigma) Xinv and K = V diag(mu) Xinv, with X a right inverse of
    Xinv. U has min(m, p) columns; trailing entries of sigma beyond that are 0.
    """

    U: NDArray[np.float64]
    V: NDArray[np.float64]
    X: NDArray[np.float64]
    Xinv: NDArray[np.float64]
    sigma: NDArray[np.float64]
    mu: NDArray[np.float64]

    @property
    def rank(self) -> int:
        """Effective rank p of the stacked pair."""
        return int(self.sigma.shape[0])

    @property
    def n_rows(self) -> int:
        """Row count m of A."""
        return int(self.U.shape[0])

    def project(self, f: NDArray[np.float64]) -> NDArray[np.float64]:
        """Return U^T f padded with zeros to length p."""
        beta = np.zeros(self.rank)
        beta[: self.U.shape[1]] = self.U.T @ f
        return beta

    def reconstruct_a(self) -> NDArray[np.float64]:
        """Rebuild A from the factors."""
        q = self.U.shape[1]
        return self.U @ (self.sigma[:q, None] * self.Xinv[:q])

    def reconstruct_k(self) -> NDArray[np.float64]:
        """Rebuild K from the factors."""
        return self.V @ (self.mu[:, None] * self.Xinv)

    def filter_factors(self, lam: float) -> NDArray[np.float64]:
        """Return sigma / (sigma^2 + lam mu^2)."""
        return self.sigma / (self.sigma**2 + lam * self.mu**2)

    def apply_inverse_hessian(
        self, v: NDArray[np.float64], lam: float
    ) -> NDArray[np.float64]:
        """Apply (A^T A + lam K^T K)^+ to v through X diag(1/(s^2 + lam m^2)) X^T."""
        w = self.X.T @ v
        w /= self.sigma**2 + lam * self.mu**2
        return self.X @ w


@dataclass(frozen=True)
class TikhonovSolution:
    """Minimizer of |A c - f|^2 + lam |K c|^2 with its two norms."""

    c: NDArray[np.float64]
    lam: float
    residual_norm: float
    penalty_norm: float


def gsvd(A: ArrayLike, K: ArrayLike) -> GsvdFactors:
    """Decompose the pair (A, K) by QR of the stacked matrix then a CS split.

    Columns of the pivoted R below RANK_RTOL relative to the leading diagonal
    entry are truncated, so the factors have p = numerical rank columns.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    m, n = A.shape
    if m < 1 or K.shape[1] != n:
        raise ConfigurationError(
            f"incompatible pair shapes A{A.shape} and K{K.shape}"
        )
    if not np.any(K):
        raise DecompositionError("penalty matrix K is identically zero")

    stacked = np.vstack([A, K])
    Qs, R, piv = linalg.qr(stacked, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise DecompositionError("stacked pair is numerically rank 0")
    p = int(np.count_nonzero(diag > RANK_RTOL * diag[0]))
    if p < n:
        _LOGGER.debug("GSVD rank truncated from %d to %d", n, p)

    Qs = Qs[:, :p]
    Rp = R[:p, :]
    # M = Qs Rp P^T; undo the column pivoting once
    RPt = np.empty_like(Rp)
    RPt[:, piv] = Rp

    Q1, Q2 = Qs[:m], Qs[m:]
    q = min(m, p)
    # the right factor must be p x p; the left one stays thin
    Us, s, Yt = linalg.svd(Q1, full_matrices=m < p)
    U = Us[:, :q]
    sigma = np.zeros(p)
    sigma[:q] = np.clip(s[:q], 0.0, 1.0)
    Y = Yt.T

    Vq, Rv = linalg.qr(Q2 @ Y, mode="economic")
    signs = np.where(np.diag(Rv) < 0, -1.0, 1.0)
    V = Vq * signs
    mu = np.abs(np.diag(Rv))

    Xinv = Yt @ RPt
    if p == n:
        X = np.empty((n, p))
        X[piv, :] = linalg.solve_triangular(R[:p, :p], Y)
    else:
        X = linalg.pinv(Xinv)

    return GsvdFactors(U=U, V=V, X=X, Xinv=Xinv, sigma=sigma, mu=mu)


def psd_sqrt(G: ArrayLike) -> NDArray[np.float64]:
    """Return the symmetric PSD square root of a symmetric PSD matrix."""
    G = np.asarray(G, dtype=np.float64)
    scale = linalg.norm(G)
    if scale == 0.0:
        return np.zeros_like(G)
    if linalg.norm(G - G.T) > SYMMETRY_RTOL * scale:
        raise DecompositionError("matrix is not symmetric")

    w, vecs = linalg.eigh(0.5 * (G + G.T))
    w_max = float(w.max())
    if w_max <= 0.0 or w.min() < -PSD_NEGATIVE_RTOL * w_max:
        raise NotPositiveSemidefiniteError(
            f"smallest eigenvalue {w.min():.3e} against largest {w_max:.3e}"
        )
    root = np.where(w < PSD_CLAMP_RTOL * w_max, 0.0, np.sqrt(np.abs(w)))
    return (vecs * root) @ vecs.T


def tikhonov_solve(fac: GsvdFactors, f: ArrayLike, lam: float) -> TikhonovSolution:
    """Solve the Tikhonov problem through the GSVD filter factors."""
    if not lam > 0:
        raise ConfigurationError(f"lambda must be positive, got {lam}")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (fac.n_rows,):
        raise ConfigurationError(
            f"right-hand side has shape {f.shape}, expected ({fac.n_rows},)"
        )
    y = fac.filter_factors(lam) * fac.project(f)
    c = fac.X @ y
    q = fac.U.shape[1]
    fitted = fac.U @ (fac.sigma[:q] * y[:q])
    return TikhonovSolution(
        c=c,
        lam=float(lam),
        residual_norm=float(linalg.norm(f - fitted)),
        penalty_norm=float(linalg.norm(fac.mu * y)),
    )


def direct_solve(
    A: ArrayLike, K: ArrayLike, f: ArrayLike, lam: float
) -> TikhonovSolution:
    """Solve (A^T A + lam K^T K) c = A^T f by Cholesky factorization."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    f = np.asarray(f, dtype=np.float64)
    if lam < 0:
        raise ConfigurationError(f"lambda must be nonnegative, got {lam}")
    normal = A.T @ A + lam * (K.T @ K)
    try:
        factor = linalg.cho_factor(normal)
    except linalg.LinAlgError as err:
        raise SolveError("regularized normal matrix is singular") from err
    c = linalg.cho_solve(factor, A.T @ f)
    if not np.all(np.isfinite(c)):
        raise SolveError("regularized normal equations produced non-finite values")
    return TikhonovSolution(
        c=c,
        lam=float(lam),
        residual_norm=float(linalg.norm(A @ c - f)),
        penalty_norm=float(linalg.norm(K @ c)),
    )
