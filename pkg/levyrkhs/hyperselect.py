"""Regularization parameter selection: bilevel optimization, L-curve and GCV."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .assembly import RegressionSystem, SystemSplit
from .const import (
    DEFAULT_EPS_GAMMA,
    DEFAULT_EPS_LOSS,
    DEFAULT_ETA0,
    DEFAULT_GAMMA0,
    DEFAULT_GRAD_EPS,
    DEFAULT_IOTA,
    DEFAULT_LAMBDA_MAX_EXP,
    DEFAULT_LAMBDA_MIN_EXP,
    DEFAULT_LAMBDA_NUM,
    DEFAULT_MAX_ITERS,
    DEFAULT_STOP_WINDOW,
    DEFAULT_V0,
)
from .exceptions import ConfigurationError, DivergenceError, StateError
from .regsolve import GsvdFactors, TikhonovSolution, gsvd, psd_sqrt, tikhonov_solve

_LOGGER = logging.getLogger(__name__)

_LN10 = math.log(10.0)
# Points where the L-curve barely moves carry no corner information
_LCURVE_MIN_SPEED = 1e-6

Monitor = Callable[[NDArray[np.float64]], float]


class PenaltyNorm(StrEnum):
    """Regularization norms for the coefficient vector."""

    RKHS = "rkhs"
    L2RHO = "l2rho"
    EUCLIDEAN = "l2"


class SelectionMethod(StrEnum):
    """Regularization parameter selectors."""

    BILEVEL = "bilevel"
    LCURVE = "lcurve"
    GCV = "gcv"


class StopReason(StrEnum):
    """Why the bilevel iteration ended."""

    CONVERGED_WINDOW = "converged-window"
    MAX_ITERS = "max-iters"


def penalty_root(norm: PenaltyNorm, system: RegressionSystem) -> NDArray[np.float64]:
    """Return the PSD root K with |K c|^2 equal to the penalty quadratic."""
    if norm is PenaltyNorm.RKHS:
        return psd_sqrt(system.Gbar)
    if norm is PenaltyNorm.L2RHO:
        weighted = (system.Gbar * (system.dr * system.rho_hat)) @ system.Gbar.T
        return psd_sqrt(0.5 * (weighted + weighted.T))
    return np.eye(system.n_basis)


def default_lambda_grid(
    min_exponent: float = DEFAULT_LAMBDA_MIN_EXP,
    max_exponent: float = DEFAULT_LAMBDA_MAX_EXP,
    num: int = DEFAULT_LAMBDA_NUM,
) -> NDArray[np.float64]:
    """Return a log-spaced lambda grid."""
    if num < 1 or max_exponent < min_exponent:
        raise ConfigurationError("lambda grid needs num >= 1 and min <= max exponent")
    return np.logspace(min_exponent, max_exponent, num)


@dataclass(frozen=True)
class BilevelConfig:
    """Optimizer settings: learning rate, momentum and early stopping."""

    eta0: float = DEFAULT_ETA0
    iota: float = DEFAULT_IOTA
    max_iters: int = DEFAULT_MAX_ITERS
    grad_eps: float = DEFAULT_GRAD_EPS
    stop_window: int = DEFAULT_STOP_WINDOW
    eps_gamma: float = DEFAULT_EPS_GAMMA
    eps_loss: float = DEFAULT_EPS_LOSS
    gamma0: float = DEFAULT_GAMMA0
    v0: float = DEFAULT_V0

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.eta0 <= 0 or self.grad_eps <= 0:
            raise ConfigurationError("eta0 and grad_eps must be positive")
        if not 0.0 <= self.iota < 1.0:
            raise ConfigurationError(f"momentum iota must lie in [0, 1), got {self.iota}")
        if self.max_iters < 1 or self.stop_window < 1:
            raise ConfigurationError("max_iters and stop_window must be at least 1")
        if self.eps_gamma <= 0 or self.eps_loss <= 0:
            raise ConfigurationError("stopping thresholds must be positive")


@dataclass(frozen=True)
class BilevelRecord:
    """One iteration: gamma after the update, loss and gradient at the look-ahead."""

    k: int
    gamma: float
    loss: float
    velocity: float
    grad: float
    error: float | None = None


@dataclass
class BilevelTrace:
    """Iteration history of the bilevel optimizer."""

    records: list[BilevelRecord] = field(default_factory=list)
    stop_reason: StopReason | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def gammas(self) -> NDArray[np.float64]:
        """Gamma after every iteration."""
        return np.array([rec.gamma for rec in self.records])

    @property
    def losses(self) -> NDArray[np.float64]:
        """Validation loss of every iteration."""
        return np.array([rec.loss for rec in self.records])


@dataclass(frozen=True, eq=False)
class Selection:
    """Chosen regularization parameter with its solution and diagnostics."""

    method: SelectionMethod
    lam: float
    solution: TikhonovSolution
    trace: BilevelTrace | None = None
    lambda_grid: NDArray[np.float64] | None = None
    scores: NDArray[np.float64] | None = None
    fallback: bool = False

    @property
    def c(self) -> NDArray[np.float64]:
        """Coefficient vector."""
        return self.solution.c


class HyperparameterSelector:
    """Selects lambda for min |A_L c - f_L|^2 + lambda |K c|^2.

    The GSVD of (A_L, K) is computed once and reused by every selector.
    """

    def __init__(
        self,
        A_train: ArrayLike,
        f_train: ArrayLike,
        A_valid: ArrayLike,
        f_valid: ArrayLike,
        K: ArrayLike,
    ) -> None:
        """Initialize with training and validation blocks and the penalty root."""
        self.A_train = np.atleast_2d(np.asarray(A_train, dtype=np.float64))
        self.f_train = np.asarray(f_train, dtype=np.float64)
        self.A_valid = np.atleast_2d(np.asarray(A_valid, dtype=np.float64))
        self.f_valid = np.asarray(f_valid, dtype=np.float64)
        self.K = np.atleast_2d(np.asarray(K, dtype=np.float64))
        self._factors: GsvdFactors | None = None

    @classmethod
    def from_split(cls, split: SystemSplit, norm: PenaltyNorm) -> HyperparameterSelector:
        """Build a selector from a train/validation split."""
        return cls(
            split.train.design_matrix,
            split.train.f,
            split.valid.design_matrix,
            split.valid.f,
            penalty_root(norm, split.train),
        )

    @property
    def prepared(self) -> bool:
        """True once the GSVD is available."""
        return self._factors is not None

    @property
    def factors(self) -> GsvdFactors:
        """GSVD of the training pair, computed on first use."""
        if self._factors is None:
            self._factors = gsvd(self.A_train, self.K)
            _LOGGER.debug(
                "GSVD of %dx%d pair has rank %d",
                self.A_train.shape[0],
                self.A_train.shape[1],
                self._factors.rank,
            )
        return self._factors

    def lower_solve(self, gamma: float) -> TikhonovSolution:
        """Return c(gamma), the Tikhonov solution at lambda = 10^gamma."""
        return tikhonov_solve(self.factors, self.f_train, 10.0**gamma)

    def upper_loss(self, c: NDArray[np.float64]) -> float:
        """Return the validation loss |A_U c - f_U|^2."""
        residual = self.A_valid @ c - self.f_valid
        return float(residual @ residual)

    def hypergradient(self, gamma: float, c: NDArray[np.float64]) -> float:
        """Return dF/dgamma at c = c(gamma) by implicit differentiation."""
        if self._factors is None:
            raise StateError("hypergradient needs the GSVD; call lower_solve first")
        lam = 10.0**gamma
        upper = self.A_valid.T @ (self.A_valid @ c - self.f_valid)
        penalty = self.K.T @ (self.K @ c)
        return float(
            -2.0 * _LN10 * lam * upper @ self._factors.apply_inverse_hessian(penalty, lam)
        )

    def bilevel_optimize(
        self, cfg: BilevelConfig | None = None, monitor: Monitor | None = None
    ) -> Selection:
        """Minimize the validation loss over gamma with normalized Nesterov steps.

        Stops at the first k >= W whose last W changes in gamma and loss are all
        below their thresholds, or after max_iters. monitor, when given, maps
        each look-ahead solution to an error stored in the trace.
        """
        cfg = cfg or BilevelConfig()
        trace = BilevelTrace()
        gamma, velocity = cfg.gamma0, cfg.v0
        prev_loss = self.upper_loss(self.lower_solve(gamma).c)
        prev_gamma = gamma
        calm = 0

        for k in range(1, cfg.max_iters + 1):
            look = gamma - cfg.iota * velocity
            sol = self.lower_solve(look)
            loss = self.upper_loss(sol.c)
            grad = self.hypergradient(look, sol.c)
            if not (math.isfinite(loss) and math.isfinite(grad)):
                raise DivergenceError(
                    f"non-finite loss {loss} or gradient {grad} at iteration {k}", trace
                )
            eta = cfg.eta0 / math.sqrt(k)
            velocity = cfg.iota * velocity + eta * grad / (abs(grad) + cfg.grad_eps)
            gamma -= velocity
            if not math.isfinite(gamma):
                raise DivergenceError(f"gamma left the finite range at iteration {k}", trace)

            error = monitor(sol.c) if monitor is not None else None
            trace.records.append(BilevelRecord(k, gamma, loss, velocity, grad, error))
            _LOGGER.debug(
                "iter %d: gamma=%.6f loss=%.6e grad=%.3e", k, gamma, loss, grad
            )

            small = (
                abs(gamma - prev_gamma) < cfg.eps_gamma
                and abs(loss - prev_loss) < cfg.eps_loss
            )
            calm = calm + 1 if small else 0
            prev_gamma, prev_loss = gamma, loss
            if k >= cfg.stop_window and calm >= cfg.stop_window:
                trace.stop_reason = StopReason.CONVERGED_WINDOW
                break
        else:
            trace.stop_reason = StopReason.MAX_ITERS

        solution = self.lower_solve(gamma)
        _LOGGER.info(
            "Bilevel stopped (%s) after %d iterations at gamma=%.4f",
            trace.stop_reason,
            len(trace),
            gamma,
        )
        return Selection(SelectionMethod.BILEVEL, solution.lam, solution, trace=trace)

    def lcurve_select(self, lambda_grid: ArrayLike | None = None) -> Selection:
        """Pick the lambda of maximum L-curve curvature on the training block."""
        grid = _as_grid(lambda_grid)
        solutions = [tikhonov_solve(self.factors, self.f_train, lam) for lam in grid]
        if grid.size == 1:
            return Selection(SelectionMethod.LCURVE, float(grid[0]), solutions[0], lambda_grid=grid)

        with np.errstate(divide="ignore"):
            x = np.log([sol.residual_norm for sol in solutions])
            y = np.log([sol.penalty_norm for sol in solutions])
        finite = bool(np.all(np.isfinite(x)) and np.all(np.isfinite(y)))
        if grid.size < 3 or not finite or (np.ptp(x) < 1e-12 and np.ptp(y) < 1e-12):
            _LOGGER.warning("L-curve is degenerate; falling back to GCV")
            fallback = self.gcv_select(grid)
            return Selection(
                SelectionMethod.LCURVE,
                fallback.lam,
                fallback.solution,
                lambda_grid=grid,
                scores=fallback.scores,
                fallback=True,
            )

        t = np.log10(grid)
        dx, dy = np.gradient(x, t), np.gradient(y, t)
        ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
        speed2 = dx**2 + dy**2
        moving = speed2 > (_LCURVE_MIN_SPEED**2) * speed2.max()
        curvature = np.full(grid.size, -np.inf)
        curvature[moving] = (dx * ddy - dy * ddx)[moving] / speed2[moving] ** 1.5
        best = _last_extremum(curvature, np.argmax)
        _LOGGER.info("L-curve corner at lambda=%.3e", grid[best])
        return Selection(
            SelectionMethod.LCURVE,
            float(grid[best]),
            solutions[best],
            lambda_grid=grid,
            scores=curvature,
        )

    def gcv_select(self, lambda_grid: ArrayLike | None = None) -> Selection:
        """Pick the lambda minimizing the generalized cross-validation function."""
        grid = _as_grid(lambda_grid)
        fac = self.factors
        m = self.A_train.shape[0]
        scores = np.full(grid.size, np.inf)
        solutions: list[TikhonovSolution] = []
        for idx, lam in enumerate(grid):
            sol = tikhonov_solve(fac, self.f_train, lam)
            solutions.append(sol)
            influence = float(np.sum(fac.sigma**2 / (fac.sigma**2 + lam * fac.mu**2)))
            denominator = m - influence
            if denominator <= 0:
                _LOGGER.warning("Skipping lambda=%.3e: GCV denominator %.3e", lam, denominator)
                continue
            scores[idx] = sol.residual_norm**2 / denominator**2
        if not np.any(np.isfinite(scores)):
            raise ConfigurationError("GCV is undefined at every lambda of the grid")
        best = _last_extremum(scores, np.argmin)
        _LOGGER.info("GCV minimum at lambda=%.3e", grid[best])
        return Selection(
            SelectionMethod.GCV,
            float(grid[best]),
            solutions[best],
            lambda_grid=grid,
            scores=scores,
        )


def selector_for(split: SystemSplit, norm: PenaltyNorm) -> HyperparameterSelector:
    """Return the selector of a (split, norm) pair, built once and kept on the split."""
    selector = split.selectors.get(norm)
    if selector is None:
        selector = split.selectors[norm] = HyperparameterSelector.from_split(split, norm)
    return selector


def lower_solve(split: SystemSplit, norm: PenaltyNorm, gamma: float) -> TikhonovSolution:
    """Solve the lower-level problem at lambda = 10^gamma."""
    return selector_for(split, norm).lower_solve(gamma)


def upper_loss(split: SystemSplit, c: NDArray[np.float64]) -> float:
    """Return |Abar_U c - f_U|^2."""
    residual = split.valid.design_matrix @ c - split.valid.f
    return float(residual @ residual)


def hypergradient(
    split: SystemSplit, norm: PenaltyNorm, gamma: float, c: NDArray[np.float64]
) -> float:
    """Return the derivative of the validation loss with respect to gamma."""
    return selector_for(split, norm).hypergradient(gamma, c)


def bilevel_optimize(
    split: SystemSplit,
    norm: PenaltyNorm,
    cfg: BilevelConfig | None = None,
    monitor: Monitor | None = None,
) -> Selection:
    """Run the bilevel optimizer on a split."""
    return selector_for(split, norm).bilevel_optimize(cfg, monitor)


def lcurve_select(
    split: SystemSplit, norm: PenaltyNorm, lambda_grid: ArrayLike | None = None
) -> Selection:
    """Select lambda by the L-curve corner."""
    return selector_for(split, norm).lcurve_select(lambda_grid)


def gcv_select(
    split: SystemSplit, norm: PenaltyNorm, lambda_grid: ArrayLike | None = None
) -> Selection:
    """Select lambda by generalized cross-validation."""
    return selector_for(split, norm).gcv_select(lambda_grid)


def _as_grid(lambda_grid: ArrayLike | None) -> NDArray[np.float64]:
    grid = default_lambda_grid() if lambda_grid is None else np.ravel(np.asarray(lambda_grid, dtype=np.float64))
    if grid.size == 0 or np.any(grid <= 0):
        raise ConfigurationError("lambda grid must be nonempty and positive")
    return grid


def _last_extremum(
    values: NDArray[np.float64], pick: Callable[[NDArray[np.float64]], np.intp]
) -> int:
    """Index of the extremum, ties resolved toward the end of the array."""
    return int(values.size - 1 - pick(values[::-1]))
