"""Estimator evaluation and error metrics."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .assembly import RegressionSystem
from .exceptions import ConfigurationError, DomainError, MetricError
from .model import LevyDensitySpec

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """Estimated Levy density on the r-grid with its errors."""

    c: NDArray[np.float64]
    lam: float
    r_grid: NDArray[np.float64]
    phi_hat: NDArray[np.float64]
    phi_true: NDArray[np.float64] | None
    rho_hat: NDArray[np.float64]
    abs_error: float | None
    rel_error: float | None
    loss: float
    method: str
    norm: str


def eval_phi(system: RegressionSystem, c: ArrayLike) -> NDArray[np.float64]:
    """Return phi_hat(r_k) = (Gbar c)_k."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (system.n_basis,):
        raise ConfigurationError(
            f"coefficient vector has shape {c.shape}, expected ({system.n_basis},)"
        )
    return system.Gbar @ c


def l2rho_error(
    phi_hat: ArrayLike, phi_true: ArrayLike, rho_hat: ArrayLike, dr: float
) -> tuple[float, float]:
    """Return the absolute and relative rho-weighted L2 errors."""
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    phi_true = np.asarray(phi_true, dtype=np.float64)
    rho = np.asarray(rho_hat, dtype=np.float64)
    if not phi_hat.shape == phi_true.shape == rho.shape:
        raise ConfigurationError(
            f"length mismatch: {phi_hat.shape}, {phi_true.shape}, {rho.shape}"
        )
    weights = dr * rho
    absolute = math.sqrt(float(np.sum(weights * (phi_hat - phi_true) ** 2)))
    reference = math.sqrt(float(np.sum(weights * phi_true**2)))
    if reference == 0.0:
        raise MetricError("relative error undefined: true density has zero norm")
    return absolute, absolute / reference


def convergence_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log(error) against log(dx)."""
    if len(points) < 3:
        raise DomainError(f"need at least three (dx, error) points, got {len(points)}")
    data = np.asarray(points, dtype=np.float64)
    if np.any(data <= 0):
        raise DomainError("mesh sizes and errors must be positive")
    slope, _ = np.polyfit(np.log(data[:, 0]), np.log(data[:, 1]), 1)
    return float(slope)


def evaluate_estimate(
    system: RegressionSystem,
    c: NDArray[np.float64],
    lam: float,
    loss: float,
    levy: LevyDensitySpec | None,
    method: str,
    norm: str,
) -> EstimateResult:
    """Evaluate phi_hat and, when the true density is known, its errors."""
    phi_hat = eval_phi(system, c)
    phi_true = levy(system.r_grid) if levy is not None else None
    abs_error = rel_error = None
    if phi_true is not None:
        abs_error, rel_error = l2rho_error(phi_hat, phi_true, system.rho_hat, system.dr)
        _LOGGER.info(
            "%s/%s estimate: lambda=%.3e, relative L2rho error=%.4g",
            method,
            norm,
            lam,
            rel_error,
        )
    return EstimateResult(
        c=c,
        lam=lam,
        r_grid=system.r_grid,
        phi_hat=phi_hat,
        phi_true=phi_true,
        rho_hat=system.rho_hat,
        abs_error=abs_error,
        rel_error=rel_error,
        loss=loss,
        method=method,
        norm=norm,
    )
