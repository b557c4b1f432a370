"""Assembly of the discrete regression system from density snapshots."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import DEFAULT_SIGMA, GRID_TOL
from .exceptions import AssemblyError, ConfigurationError, SplitError
from .fpe_datagen import DensityDataset
from .model import DriftSpec, LevyDensitySpec, ProblemDomain

if TYPE_CHECKING:
    from .hyperselect import HyperparameterSelector, PenaltyNorm

_LOGGER = logging.getLogger(__name__)


class SplitPolicy(StrEnum):
    """How snapshots are divided between training and validation."""

    INTERLEAVE = "interleave"
    BLOCK = "block"


@dataclass(frozen=True, eq=False)
class RegressionSystem:
    """Q c ~ f over snapshot-major rows (i, j) -> i * M + j.

    Q and f carry the sqrt(dx / N) weight. rho_hat, Gbar and r_grid only cover
    explored jump sizes; dropped_indices lists the 0-based r-grid positions
    removed because rho_hat vanished there.
    """

    Q: NDArray[np.float64]
    f: NDArray[np.float64]
    rho_hat: NDArray[np.float64]
    Z: float
    Gbar: NDArray[np.float64]
    r_grid: NDArray[np.float64]
    dr: float
    x_interior: NDArray[np.float64]
    times: NDArray[np.float64]
    dropped_indices: tuple[int, ...] = ()
    snapshot_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Fill snapshot ids and validate shapes."""
        if not self.snapshot_ids:
            object.__setattr__(self, "snapshot_ids", tuple(range(self.times.size)))
        n = self.r_grid.size
        rows = self.times.size * self.x_interior.size
        if self.Q.shape != (rows, n) or self.f.shape != (rows,):
            raise AssemblyError(
                f"system shapes disagree: Q{self.Q.shape}, f{self.f.shape}, "
                f"{self.times.size} snapshots x {self.x_interior.size} points, n={n}"
            )
        if self.Gbar.shape != (n, n) or self.rho_hat.shape != (n,):
            raise AssemblyError("kernel and exploration measure do not match the r-grid")

    @property
    def n_snapshots(self) -> int:
        """Number of snapshots N in this (sub)system."""
        return int(self.times.size)

    @property
    def n_interior(self) -> int:
        """Interior grid size M."""
        return int(self.x_interior.size)

    @property
    def n_basis(self) -> int:
        """Number of r-grid points n."""
        return int(self.r_grid.size)

    def row_index(self, i: int, j: int) -> int:
        """Return the row of snapshot position i and interior point j."""
        return i * self.n_interior + j

    @cached_property
    def design_matrix(self) -> NDArray[np.float64]:
        """Abar = Q Gbar dr."""
        return (self.Q @ self.Gbar) * self.dr

    def subset(self, positions: ArrayLike) -> RegressionSystem:
        """Return the rows of the given snapshot positions, sharing the kernel."""
        pos = np.asarray(positions, dtype=np.intp)
        m, n = self.n_interior, self.n_basis
        return RegressionSystem(
            Q=self.Q.reshape(self.n_snapshots, m, n)[pos].reshape(-1, n),
            f=self.f.reshape(self.n_snapshots, m)[pos].reshape(-1),
            rho_hat=self.rho_hat,
            Z=self.Z,
            Gbar=self.Gbar,
            r_grid=self.r_grid,
            dr=self.dr,
            x_interior=self.x_interior,
            times=self.times[pos],
            dropped_indices=self.dropped_indices,
            snapshot_ids=tuple(self.snapshot_ids[p] for p in pos),
        )


@dataclass(frozen=True, eq=False)
class SystemSplit:
    """Training (lower level) and validation (upper level) blocks."""

    train: RegressionSystem
    valid: RegressionSystem
    policy: SplitPolicy
    selectors: dict[PenaltyNorm, HyperparameterSelector] = field(
        default_factory=dict, init=False, repr=False
    )


def interior_indices(ds: DensityDataset, domain: ProblemDomain) -> tuple[int, int]:
    """Return [start, stop) of the grid indices with x in [-L + R0, L - R0]."""
    grid_domain = domain.with_dx(ds.dx)
    if grid_domain.nx != ds.x_grid.size or abs(ds.x_grid[0] + domain.L) > GRID_TOL * domain.L:
        raise ConfigurationError(
            f"dataset grid ({ds.x_grid.size} nodes from {ds.x_grid[0]}) does not "
            f"cover [-{domain.L}, {domain.L}] at dx={ds.dx}"
        )
    ratio = domain.R0 / ds.dx
    if abs(ratio - round(ratio)) > GRID_TOL * ratio:
        raise ConfigurationError(f"dx={ds.dx} does not divide R0={domain.R0}")
    n = grid_domain.n_r
    return n, grid_domain.nx - n


def compute_f_tilde(
    ds: DensityDataset,
    drift: DriftSpec,
    domain: ProblemDomain,
    sigma: float = DEFAULT_SIGMA,
) -> NDArray[np.float64]:
    """Return f~ = dp/dt + d(b p)/dx - (sigma^2 / 2) d2p/dx2 on the interior.

    The time derivative is the forward difference to the companion rows.
    Interior-region endpoints use inward one-sided second-order stencils.
    """
    lo, hi = interior_indices(ds, domain)
    h = ds.dx
    p = ds.values
    bp = drift(ds.x_grid) * p

    dpdt = (ds.companions[:, lo:hi] - p[:, lo:hi]) / ds.diff_dt

    d_bp = (bp[:, lo + 1 : hi + 1] - bp[:, lo - 1 : hi - 1]) / (2.0 * h)
    d2p = (p[:, lo + 1 : hi + 1] - 2.0 * p[:, lo:hi] + p[:, lo - 1 : hi - 1]) / h**2

    left, right = lo, hi - 1
    d_bp[:, 0] = (-3.0 * bp[:, left] + 4.0 * bp[:, left + 1] - bp[:, left + 2]) / (2.0 * h)
    d_bp[:, -1] = (3.0 * bp[:, right] - 4.0 * bp[:, right - 1] + bp[:, right - 2]) / (2.0 * h)
    d2p[:, 0] = (
        2.0 * p[:, left] - 5.0 * p[:, left + 1] + 4.0 * p[:, left + 2] - p[:, left + 3]
    ) / h**2
    d2p[:, -1] = (
        2.0 * p[:, right] - 5.0 * p[:, right - 1] + 4.0 * p[:, right - 2] - p[:, right - 3]
    ) / h**2

    return dpdt + d_bp - 0.5 * sigma**2 * d2p


def raw_second_differences(
    ds: DensityDataset, domain: ProblemDomain
) -> NDArray[np.float64]:
    """Return Q[p_i](x_j, r_k) with shape (N, M, n) over interior x_j."""
    lo, hi = interior_indices(ds, domain)
    n = lo
    p = ds.values
    centre = p[:, lo:hi]
    raw = np.empty((ds.n_snapshots, hi - lo, n))
    for k in range(1, n + 1):
        raw[:, :, k - 1] = p[:, lo + k : hi + k] + p[:, lo - k : hi - k] - 2.0 * centre
    return raw


def build_Q(
    ds: DensityDataset, domain: ProblemDomain
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return (Q, raw): the weighted (N M, n) matrix and the (N, M, n) raw values."""
    raw = raw_second_differences(ds, domain)
    n_snap, m, n = raw.shape
    weight = math.sqrt(ds.dx / n_snap)
    return weight * raw.reshape(n_snap * m, n), raw


def build_rho_hat(raw: ArrayLike, dx: float) -> tuple[NDArray[np.float64], float]:
    """Return the exploration measure on the r-grid and its normalizer Z.

    raw has snapshots on the first axis and the r-grid on the last.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n_snap = raw.shape[0]
    weights = np.abs(raw).reshape(-1, raw.shape[-1]).sum(axis=0) * dx / n_snap
    Z = float(weights.sum() * dx)
    if Z == 0.0:
        raise AssemblyError("data explores nothing: every second difference is zero")
    return weights / Z, Z


def build_kernel(Q: ArrayLike, rho_hat: ArrayLike) -> NDArray[np.float64]:
    """Return Gbar = (Q^T Q) / (rho rho^T) over the explored r-grid points."""
    Q = np.asarray(Q, dtype=np.float64)
    rho = np.asarray(rho_hat, dtype=np.float64)
    explored = rho > 0
    if not explored.all():
        _LOGGER.warning(
            "Dropping %d unexplored r-grid points from the kernel",
            int((~explored).sum()),
        )
        Q = Q[:, explored]
        rho = rho[explored]
    G = Q.T @ Q
    G = 0.5 * (G + G.T)
    return G / np.outer(rho, rho)


def nonlocal_operator(
    ds: DensityDataset, domain: ProblemDomain, levy: LevyDensitySpec
) -> NDArray[np.float64]:
    """Return sum_k phi(r_k) Q[p_i](x_j, r_k) dr on the interior, shape (N, M)."""
    raw = raw_second_differences(ds, domain)
    r = ds.dx * np.arange(1, raw.shape[-1] + 1)
    return raw @ (levy(r) * ds.dx)


def assemble(
    ds: DensityDataset,
    domain: ProblemDomain,
    drift: DriftSpec,
    sigma: float = DEFAULT_SIGMA,
    skip_snapshots: int = 0,
) -> RegressionSystem:
    """Build the full regression system from a dataset."""
    ds = ds.drop_snapshots(skip_snapshots)
    lo, hi = interior_indices(ds, domain)
    Q, raw = build_Q(ds, domain)
    rho, Z = build_rho_hat(raw, ds.dx)
    Gbar = build_kernel(Q, rho)

    explored = rho > 0
    dropped = tuple(int(k) for k in np.flatnonzero(~explored))
    r_grid = ds.dx * np.arange(1, rho.size + 1)
    f = compute_f_tilde(ds, drift, domain, sigma) * math.sqrt(ds.dx / ds.n_snapshots)

    system = RegressionSystem(
        Q=Q[:, explored] if dropped else Q,
        f=f.reshape(-1),
        rho_hat=rho[explored],
        Z=Z,
        Gbar=Gbar,
        r_grid=r_grid[explored],
        dr=ds.dx,
        x_interior=ds.x_grid[lo:hi].copy(),
        times=ds.times.copy(),
        dropped_indices=dropped,
    )
    _LOGGER.info(
        "Assembled system: N=%d, M=%d, n=%d (dx=%g)",
        system.n_snapshots,
        system.n_interior,
        system.n_basis,
        ds.dx,
    )
    return system


def split_train_valid(
    system: RegressionSystem, policy: SplitPolicy = SplitPolicy.INTERLEAVE
) -> SystemSplit:
    """Split snapshots into training and validation blocks.

    Interleave sends 0-based even positions to training; block sends the first
    ceil(N / 2) snapshots to training.
    """
    n_snap = system.n_snapshots
    if n_snap < 2:
        raise SplitError(f"need at least two snapshots to split, got {n_snap}")
    positions = np.arange(n_snap)
    if policy is SplitPolicy.INTERLEAVE:
        train, valid = positions[0::2], positions[1::2]
    else:
        half = (n_snap + 1) // 2
        train, valid = positions[:half], positions[half:]
    return SystemSplit(
        train=system.subset(train), valid=system.subset(valid), policy=policy
    )
