"""Density snapshots from the nonlocal Fokker-Planck equation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import fft

from .const import DEFAULT_IC_STD, GRID_TOL, MASS_TOL, NEGATIVE_DENSITY_TOL
from .exceptions import ConfigurationError, InstabilityError
from .model import DriftSpec, LevyDensitySpec, ProblemDomain

_LOGGER = logging.getLogger(__name__)


class DataSource(StrEnum):
    """Origin of a density dataset."""

    FPE = "fpe"
    KDE = "kde"


class DifferenceSpacing(StrEnum):
    """Time offset of the companion rows used for forward differences."""

    OBSERVATION = "observation"
    SOLVER = "solver"


@dataclass(frozen=True, eq=False)
class DensityDataset:
    """Density snapshots p(x_j, t_i) with companion rows p(x_j, t_i + diff_dt).

    values and companions both have shape (N, nx). For observation spacing the
    companion of snapshot i is snapshot i + 1 and the last companion sits at T.
    """

    x_grid: NDArray[np.float64]
    times: NDArray[np.float64]
    values: NDArray[np.float64]
    companions: NDArray[np.float64]
    diff_dt: float
    snapshot_dt: float
    source: DataSource
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate shapes."""
        n_t, n_x = self.values.shape
        if self.x_grid.shape != (n_x,) or self.times.shape != (n_t,):
            raise ConfigurationError(
                f"dataset shapes disagree: grid {self.x_grid.shape}, "
                f"times {self.times.shape}, values {self.values.shape}"
            )
        if self.companions.shape != self.values.shape:
            raise ConfigurationError(
                "dataset lacks companion rows for forward time differences"
            )
        if self.diff_dt <= 0 or self.snapshot_dt <= 0:
            raise ConfigurationError("time spacings must be positive")

    @property
    def dx(self) -> float:
        """Grid spacing."""
        return float(self.x_grid[1] - self.x_grid[0])

    @property
    def n_snapshots(self) -> int:
        """Number of reported snapshots N."""
        return int(self.values.shape[0])

    @property
    def chained(self) -> bool:
        """True when each companion row is the next snapshot."""
        return abs(self.diff_dt - self.snapshot_dt) <= GRID_TOL * self.snapshot_dt

    def frames(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Return every distinct (time, row) pair in time order."""
        if self.chained:
            times = np.append(self.times, self.times[-1] + self.diff_dt)
            rows = np.vstack([self.values, self.companions[-1:]])
            return times, rows
        times = np.concatenate([self.times, self.times + self.diff_dt])
        rows = np.vstack([self.values, self.companions])
        order = np.argsort(times, kind="stable")
        return times[order], rows[order]

    def mass(self) -> NDArray[np.float64]:
        """Return sum_j p[i, j] dx for every snapshot."""
        return self.values.sum(axis=1) * self.dx

    def subsample(self, stride: int) -> DensityDataset:
        """Return the dataset on a mesh coarser by an integer stride."""
        if stride < 1 or (self.x_grid.size - 1) % stride:
            raise ConfigurationError(
                f"stride {stride} does not divide the {self.x_grid.size - 1} grid cells"
            )
        if stride == 1:
            return self
        return replace(
            self,
            x_grid=self.x_grid[::stride].copy(),
            values=self.values[:, ::stride].copy(),
            companions=self.companions[:, ::stride].copy(),
            metadata={**self.metadata, "subsample_stride": stride},
        )

    def coarsen_to(self, dx: float) -> DensityDataset:
        """Return the dataset on mesh dx, which must be a multiple of the current one."""
        ratio = dx / self.dx
        stride = int(round(ratio))
        if stride < 1 or abs(ratio - stride) > GRID_TOL * ratio:
            raise ConfigurationError(
                f"mesh {dx} is not an integer multiple of the data mesh {self.dx}"
            )
        return self.subsample(stride)

    def drop_snapshots(self, count: int) -> DensityDataset:
        """Return the dataset without its first count snapshots."""
        if count == 0:
            return self
        if not 0 <= count < self.n_snapshots:
            raise ConfigurationError(
                f"cannot skip {count} of {self.n_snapshots} snapshots"
            )
        return replace(
            self,
            times=self.times[count:],
            values=self.values[count:],
            companions=self.companions[count:],
        )


@dataclass(frozen=True, eq=False)
class FpeConfig:
    """Finite-difference setup for the nonlocal Fokker-Planck solver."""

    domain: ProblemDomain
    solver_dx: float
    solver_dt: float
    horizon: float
    n_snapshots: int
    initial_condition: NDArray[np.float64] | None = None
    ic_std: float = DEFAULT_IC_STD
    difference_spacing: DifferenceSpacing = DifferenceSpacing.OBSERVATION

    def __post_init__(self) -> None:
        """Validate the solver setup."""
        if self.solver_dx <= 0 or self.solver_dt <= 0 or self.horizon <= 0:
            raise ConfigurationError("solver_dx, solver_dt and horizon must be positive")
        if self.n_snapshots < 1:
            raise ConfigurationError("n_snapshots must be at least 1")
        if self.ic_std <= 0:
            raise ConfigurationError("ic_std must be positive")
        if self.solver_dt > self.solver_dx**2 * (1.0 + GRID_TOL):
            raise ConfigurationError(
                f"CFL violated: solver_dt={self.solver_dt} > solver_dx^2="
                f"{self.solver_dx**2}"
            )
        _integer_ratio(self.domain.dx, self.solver_dx, "observation dx", "solver_dx")
        self.domain.with_dx(self.solver_dx)
        if self.steps_per_snapshot < 1:
            raise ConfigurationError(
                f"snapshot spacing T/N={self.horizon / self.n_snapshots} is shorter than "
                f"solver_dt={self.solver_dt}"
            )
        if abs(self.effective_horizon - self.horizon) > GRID_TOL * self.horizon:
            _LOGGER.debug(
                "Snapshot spacing rounded to %d solver steps; horizon %.6g becomes %.6g",
                self.steps_per_snapshot,
                self.horizon,
                self.effective_horizon,
            )
        if self.initial_condition is not None:
            ic = np.asarray(self.initial_condition, dtype=np.float64)
            if ic.shape != (self.solver_domain.nx,):
                raise ConfigurationError(
                    f"initial condition has {ic.size} values, solver grid has "
                    f"{self.solver_domain.nx}"
                )
            if ic.min() < 0:
                raise ConfigurationError("initial condition must be nonnegative")
            mass = float(ic.sum() * self.solver_dx)
            if abs(mass - 1.0) > MASS_TOL:
                raise ConfigurationError(
                    f"initial condition has mass {mass!r}, expected 1 within {MASS_TOL}"
                )

    @property
    def solver_domain(self) -> ProblemDomain:
        """The domain on the solver mesh."""
        return self.domain.with_dx(self.solver_dx)

    @property
    def steps_per_snapshot(self) -> int:
        """Solver steps between snapshots, T / (N dt) rounded to the nearest integer."""
        return int(round(self.horizon / (self.n_snapshots * self.solver_dt)))

    @property
    def snapshot_dt(self) -> float:
        """Observation spacing on the solver time grid."""
        return self.steps_per_snapshot * self.solver_dt

    @property
    def effective_horizon(self) -> float:
        """Time of the last companion row under observation spacing."""
        return self.n_snapshots * self.snapshot_dt

    @property
    def stride(self) -> int:
        """Solver nodes per observation cell."""
        return int(round(self.domain.dx / self.solver_dx))

    def initial_density(self) -> NDArray[np.float64]:
        """Return the initial density on the solver grid."""
        if self.initial_condition is not None:
            return np.asarray(self.initial_condition, dtype=np.float64).copy()
        x = self.solver_domain.x_grid
        p0 = np.exp(-0.5 * (x / self.ic_std) ** 2)
        return p0 / (p0.sum() * self.solver_dx)

    def describe(self) -> dict[str, Any]:
        """Return a JSON-friendly description."""
        ic: dict[str, Any]
        if self.initial_condition is None:
            ic = {"kind": "gaussian", "mean": 0.0, "std": self.ic_std, "renormalized": True}
        else:
            ic = {"kind": "tabulated"}
        return {
            "L": self.domain.L,
            "R0": self.domain.R0,
            "dx": self.domain.dx,
            "solver_dx": self.solver_dx,
            "solver_dt": self.solver_dt,
            "horizon": self.horizon,
            "effective_horizon": self.effective_horizon,
            "n_snapshots": self.n_snapshots,
            "difference_spacing": self.difference_spacing.value,
            "initial_condition": ic,
        }


class NonlocalFpeSolver:
    """Explicit Euler integrator for p_t = -(b p)_x + p_xx / 2 + R_phi[p]."""

    def __init__(
        self, drift: DriftSpec, levy: LevyDensitySpec | None, cfg: FpeConfig
    ) -> None:
        """Precompute the drift, the jump kernel and its FFT."""
        self.cfg = cfg
        domain = cfg.solver_domain
        self._x = domain.x_grid
        self._nx = domain.nx
        self._h = cfg.solver_dx
        self._b = drift(self._x)
        self._n_r = domain.n_r

        self._jumps = levy is not None
        if levy is not None:
            weights = levy(domain.r_grid) * self._h
            self._weight_sum = float(weights.sum())
            kernel = np.concatenate([weights[::-1], [0.0], weights])
            self._fft_len = fft.next_fast_len(self._nx + kernel.size - 1, real=True)
            self._kernel_hat = fft.rfft(kernel, self._fft_len)
            self._interior = np.zeros(self._nx, dtype=bool)
            self._interior[self._n_r : self._nx - self._n_r] = True

    def nonlocal_term(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        """Return sum_k w_k (p_{j+k} + p_{j-k} - 2 p_j) on the interior, 0 elsewhere."""
        if not self._jumps:
            return np.zeros_like(p)
        full = fft.irfft(fft.rfft(p, self._fft_len) * self._kernel_hat, self._fft_len)
        shifted = full[self._n_r : self._n_r + self._nx]
        out = shifted - 2.0 * self._weight_sum * p
        out[~self._interior] = 0.0
        return out

    def rhs(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        """Return the semi-discrete right-hand side with zero ghost values."""
        h = self._h
        bp = np.pad(self._b * p, 1)
        padded = np.pad(p, 1)
        advection = -(bp[2:] - bp[:-2]) / (2.0 * h)
        diffusion = 0.5 * (padded[2:] - 2.0 * p + padded[:-2]) / h**2
        return advection + diffusion + self.nonlocal_term(p)

    def step(self, p: NDArray[np.float64]) -> NDArray[np.float64]:
        """Advance one explicit Euler step."""
        return p + self.cfg.solver_dt * self.rhs(p)

    def run(self) -> DensityDataset:
        """Integrate to the horizon, recording snapshots and companions."""
        cfg = self.cfg
        sps = cfg.steps_per_snapshot
        n_snap = cfg.n_snapshots
        offset = sps if cfg.difference_spacing is DifferenceSpacing.OBSERVATION else 1
        total = n_snap * sps

        snapshot_at = {i * sps: i for i in range(n_snap)}
        companion_at: dict[int, list[int]] = {}
        for i in range(n_snap):
            companion_at.setdefault(i * sps + offset, []).append(i)

        values = np.empty((n_snap, self._nx))
        companions = np.empty((n_snap, self._nx))
        p = cfg.initial_density()
        started = time.monotonic()
        for n in range(total + 1):
            if n in snapshot_at:
                values[snapshot_at[n]] = np.clip(p, 0.0, None)
            for i in companion_at.get(n, ()):
                companions[i] = np.clip(p, 0.0, None)
            if n == total:
                break
            p = self.step(p)
            low = float(p.min())
            if low < -NEGATIVE_DENSITY_TOL:
                raise InstabilityError(
                    f"density reached {low:.3e} at step {n + 1} (t={(n + 1) * cfg.solver_dt:g})"
                )
        _LOGGER.info(
            "Integrated FPE on %d nodes for %d steps in %.1f s",
            self._nx,
            total,
            time.monotonic() - started,
        )

        diff_dt = cfg.snapshot_dt if offset == sps else cfg.solver_dt
        return DensityDataset(
            x_grid=self._x.copy(),
            times=cfg.snapshot_dt * np.arange(n_snap, dtype=np.float64),
            values=values,
            companions=companions,
            diff_dt=diff_dt,
            snapshot_dt=cfg.snapshot_dt,
            source=DataSource.FPE,
            metadata={"generator": cfg.describe()},
        )


def integrate_fpe(
    drift: DriftSpec, levy: LevyDensitySpec | None, cfg: FpeConfig
) -> DensityDataset:
    """Integrate the FPE and return snapshots on the solver mesh."""
    dataset = NonlocalFpeSolver(drift, levy, cfg).run()
    metadata = dataset.metadata
    metadata["drift"] = drift.describe()
    metadata["levy"] = levy.describe() if levy is not None else None
    return dataset


def solve_fpe(
    drift: DriftSpec, levy: LevyDensitySpec | None, cfg: FpeConfig
) -> DensityDataset:
    """Integrate the FPE and subsample the snapshots to the observation mesh.

    A levy of None integrates the local equation without jumps.
    """
    return integrate_fpe(drift, levy, cfg).subsample(cfg.stride)


def _integer_ratio(coarse: float, fine: float, coarse_name: str, fine_name: str) -> int:
    ratio = coarse / fine
    nearest = int(round(ratio))
    if nearest < 1 or abs(ratio - nearest) > GRID_TOL * max(1.0, ratio):
        raise ConfigurationError(
            f"{coarse_name}={coarse} is not an integer multiple of {fine_name}={fine}"
        )
    return nearest
