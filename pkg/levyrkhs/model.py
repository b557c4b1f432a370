"""Problem definitions shared by the data generators and the evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import (
    EXPONENTIAL_DECAY_JUMP_SCALE,
    EXPONENTIAL_DECAY_RATE,
    GAUSSIAN_DECAY_JUMP_STD,
    GAUSSIAN_DECAY_RATE,
    GRID_TOL,
)
from .exceptions import ConfigurationError, DomainError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemDomain:
    """Spatial domain [-L, L], jump support (0, R0] and observation mesh dx."""

    L: float
    R0: float
    dx: float

    def __post_init__(self) -> None:
        """Validate the domain invariants."""
        if self.L <= 0 or self.R0 <= 0 or self.dx <= 0:
            raise ConfigurationError(
                f"L, R0 and dx must be positive (got L={self.L}, R0={self.R0}, dx={self.dx})"
            )
        if self.R0 >= self.L:
            raise ConfigurationError(
                f"R0={self.R0} must be smaller than L={self.L}"
            )
        if self.n_r < 2:
            raise ConfigurationError(
                f"R0/dx={self.R0 / self.dx:g} gives fewer than two r-grid points"
            )
        steps = 2.0 * self.L / self.dx
        if abs(steps - round(steps)) > GRID_TOL * max(1.0, steps):
            raise ConfigurationError(
                f"dx={self.dx} does not divide the domain width {2.0 * self.L}"
            )
        ratio = self.R0 / self.dx
        if abs(ratio - round(ratio)) > GRID_TOL * ratio:
            _LOGGER.warning(
                "R0=%g is not a multiple of dx=%g; the r-grid stops at %g",
                self.R0,
                self.dx,
                self.n_r * self.dx,
            )

    @property
    def nx(self) -> int:
        """Number of grid nodes on [-L, L]."""
        return int(round(2.0 * self.L / self.dx)) + 1

    @property
    def x_grid(self) -> NDArray[np.float64]:
        """Uniform grid on [-L, L]."""
        return -self.L + self.dx * np.arange(self.nx, dtype=np.float64)

    @property
    def n_r(self) -> int:
        """Number of r-grid points r_k = k*dx, k = 1..n."""
        return int(math.floor(self.R0 / self.dx + GRID_TOL))

    @property
    def r_grid(self) -> NDArray[np.float64]:
        """Jump-size grid r_k = k*dx."""
        return self.dx * np.arange(1, self.n_r + 1, dtype=np.float64)

    @property
    def interior_bound(self) -> float:
        """Half-width L - R0 of the interior region."""
        return self.L - self.R0

    def with_dx(self, dx: float) -> ProblemDomain:
        """Return the same domain observed on another mesh."""
        return ProblemDomain(L=self.L, R0=self.R0, dx=dx)


class DriftKind(StrEnum):
    """Drift variants."""

    LINEAR = "linear"
    SINE = "sine"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class DriftSpec:
    """Drift b(x) of the SDE."""

    kind: DriftKind
    slope: float = 0.0
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        """Validate tabulated data."""
        if self.kind is DriftKind.TABULATED:
            _check_table(self.grid, self.values, "drift")

    @classmethod
    def linear(cls, slope: float) -> DriftSpec:
        """Return b(x) = slope * x."""
        return cls(DriftKind.LINEAR, slope=float(slope))

    @classmethod
    def sine(cls) -> DriftSpec:
        """Return b(x) = sin(x)."""
        return cls(DriftKind.SINE)

    @classmethod
    def tabulated(cls, grid: ArrayLike, values: ArrayLike) -> DriftSpec:
        """Return a drift interpolated linearly from tabulated values."""
        return cls(
            DriftKind.TABULATED,
            grid=tuple(float(v) for v in np.ravel(grid)),
            values=tuple(float(v) for v in np.ravel(values)),
        )

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        """Evaluate b at x (vectorized)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind is DriftKind.LINEAR:
            return self.slope * x
        if self.kind is DriftKind.SINE:
            return np.sin(x)
        return _interpolate(self.grid, self.values, x, "drift")

    def describe(self) -> dict[str, object]:
        """Return a JSON-friendly description."""
        if self.kind is DriftKind.LINEAR:
            return {"kind": self.kind.value, "slope": self.slope}
        if self.kind is DriftKind.SINE:
            return {"kind": self.kind.value}
        return {"kind": self.kind.value, "grid": list(self.grid), "values": list(self.values)}


class LevyKind(StrEnum):
    """Levy density variants."""

    GAUSSIAN_DECAY = "gaussian_decay"
    EXPONENTIAL_DECAY = "exponential_decay"
    TABULATED = "tabulated"


class SamplerKind(StrEnum):
    """Jump-size distributions."""

    NORMAL = "normal"
    LAPLACE = "laplace"


@dataclass(frozen=True)
class JumpLaw:
    """Compound-Poisson jump law: arrival rate and jump-size distribution."""

    rate: float
    sampler: SamplerKind
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        """Validate the law."""
        if self.rate < 0 or self.scale <= 0:
            raise ConfigurationError(
                f"jump rate must be >= 0 and scale > 0 (got {self.rate}, {self.scale})"
            )

    @property
    def second_moment(self) -> float:
        """E[V^2] of one jump."""
        if self.sampler is SamplerKind.NORMAL:
            return self.loc**2 + self.scale**2
        return self.loc**2 + 2.0 * self.scale**2

    def sample(self, rng: np.random.Generator, size: int) -> NDArray[np.float64]:
        """Draw i.i.d. jump sizes."""
        if self.sampler is SamplerKind.NORMAL:
            return rng.normal(self.loc, self.scale, size)
        return rng.laplace(self.loc, self.scale, size)

    def describe(self) -> dict[str, object]:
        """Return a JSON-friendly description."""
        return {
            "rate": self.rate,
            "sampler": self.sampler.value,
            "loc": self.loc,
            "scale": self.scale,
        }


@dataclass(frozen=True)
class LevyDensitySpec:
    """Symmetric Levy density phi(|y|)."""

    kind: LevyKind
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        """Validate tabulated data."""
        if self.kind is LevyKind.TABULATED:
            _check_table(self.grid, self.values, "levy density")
            if min(self.values) < 0:
                raise ConfigurationError("tabulated Levy density must be nonnegative")

    @classmethod
    def gaussian_decay(cls) -> LevyDensitySpec:
        """Return phi(r) = exp(-r^2)."""
        return cls(LevyKind.GAUSSIAN_DECAY)

    @classmethod
    def exponential_decay(cls) -> LevyDensitySpec:
        """Return phi(r) = exp(-2|r|)."""
        return cls(LevyKind.EXPONENTIAL_DECAY)

    @classmethod
    def tabulated(cls, grid: ArrayLike, values: ArrayLike) -> LevyDensitySpec:
        """Return a density interpolated linearly from values on an r-grid."""
        return cls(
            LevyKind.TABULATED,
            grid=tuple(float(v) for v in np.ravel(grid)),
            values=tuple(float(v) for v in np.ravel(values)),
        )

    def __call__(self, r: ArrayLike) -> NDArray[np.float64]:
        """Evaluate phi(|r|) (vectorized)."""
        r = np.abs(np.asarray(r, dtype=np.float64))
        if self.kind is LevyKind.GAUSSIAN_DECAY:
            return np.exp(-(r**2))
        if self.kind is LevyKind.EXPONENTIAL_DECAY:
            return np.exp(-2.0 * r)
        return _interpolate(self.grid, self.values, r, "levy density")

    def jump_law(self) -> JumpLaw:
        """Return the compound-Poisson law whose Levy measure has this density."""
        if self.kind is LevyKind.GAUSSIAN_DECAY:
            return JumpLaw(
                rate=GAUSSIAN_DECAY_RATE,
                sampler=SamplerKind.NORMAL,
                scale=GAUSSIAN_DECAY_JUMP_STD,
            )
        if self.kind is LevyKind.EXPONENTIAL_DECAY:
            return JumpLaw(
                rate=EXPONENTIAL_DECAY_RATE,
                sampler=SamplerKind.LAPLACE,
                scale=EXPONENTIAL_DECAY_JUMP_SCALE,
            )
        raise ConfigurationError("no built-in jump law for a tabulated Levy density")

    def describe(self) -> dict[str, object]:
        """Return a JSON-friendly description."""
        if self.kind is LevyKind.TABULATED:
            return {"kind": self.kind.value, "grid": list(self.grid), "values": list(self.values)}
        return {"kind": self.kind.value}


def eval_drift(spec: DriftSpec, x: float) -> float:
    """Evaluate the drift at a single point."""
    return float(spec(x))


def eval_levy_density(spec: LevyDensitySpec, r: float) -> float:
    """Evaluate the Levy density at a single jump size."""
    if r < 0:
        raise DomainError(f"jump size must be nonnegative, got {r}")
    return float(spec(r))


def _check_table(grid: tuple[float, ...], values: tuple[float, ...], what: str) -> None:
    if len(grid) < 2 or len(grid) != len(values):
        raise ConfigurationError(
            f"tabulated {what} needs matching grid and values of length >= 2"
        )
    if np.any(np.diff(grid) <= 0):
        raise ConfigurationError(f"tabulated {what} grid must be strictly increasing")


def _interpolate(
    grid: tuple[float, ...], values: tuple[float, ...], x: NDArray[np.float64], what: str
) -> NDArray[np.float64]:
    lo, hi = grid[0], grid[-1]
    tol = GRID_TOL * max(1.0, abs(lo), abs(hi))
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise DomainError(f"{what} evaluated outside its table [{lo}, {hi}]")
    return np.interp(x, grid, values)
