"""Compound-Poisson ensembles, kernel density estimates and smoothing."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import signal

from .const import (
    DEFAULT_BANDWIDTH_CONSTANT,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_SAVGOL_ORDER,
    DEFAULT_SAVGOL_WINDOW,
    GRID_TOL,
    KDE_BIN_REFINE,
    KDE_EXACT_LIMIT,
    KDE_KERNEL_CUTOFF,
)
from .exceptions import ConfigurationError, SizeError
from .fpe_datagen import DataSource, DensityDataset
from .model import DriftSpec, JumpLaw

_LOGGER = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_EXACT_BLOCK = 4_000_000

KdeMethod = Literal["auto", "exact", "binned"]


@dataclass(frozen=True)
class EnsembleConfig:
    """Monte-Carlo setup for X_{k+1} = X_k + b(X_k) dt + dL_k."""

    n_paths: int
    dt: float
    horizon: float
    seed: int
    jump: JumpLaw
    drift: DriftSpec = field(default_factory=lambda: DriftSpec.linear(0.0))
    x0: float = 0.0
    chunk_size: int = DEFAULT_CHUNK_SIZE
    workers: int = 1

    def __post_init__(self) -> None:
        """Validate the ensemble setup."""
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be at least 1")
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigurationError("dt and horizon must be positive")
        ratio = self.horizon / self.dt
        if round(ratio) < 1 or abs(ratio - round(ratio)) > GRID_TOL * ratio:
            raise ConfigurationError(
                f"horizon {self.horizon} is not a positive multiple of dt {self.dt}"
            )
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigurationError("chunk_size and workers must be at least 1")

    @property
    def n_steps(self) -> int:
        """Number of time steps T/dt."""
        return int(round(self.horizon / self.dt))

    def describe(self) -> dict[str, object]:
        """Return a JSON-friendly description."""
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "jump": self.jump.describe(),
            "drift": self.drift.describe(),
            "x0": self.x0,
            "chunk_size": self.chunk_size,
        }


@dataclass(frozen=True, eq=False)
class KdeConfig:
    """Gaussian KDE on a uniform grid followed by Savitzky-Golay smoothing."""

    grid: NDArray[np.float64]
    bandwidth_constant: float = DEFAULT_BANDWIDTH_CONSTANT
    window: int = DEFAULT_SAVGOL_WINDOW
    order: int = DEFAULT_SAVGOL_ORDER
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        """Validate the KDE setup."""
        _check_savgol(self.window, self.order)
        if self.bandwidth_constant <= 0:
            raise ConfigurationError("bandwidth_constant must be positive")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be positive")
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2:
            raise ConfigurationError("KDE grid needs at least two nodes")
        steps = np.diff(grid)
        if np.ptp(steps) > GRID_TOL * max(1.0, float(np.abs(grid).max())):
            raise ConfigurationError("KDE grid must be uniform")

    @property
    def dx(self) -> float:
        """Grid spacing."""
        return float(self.grid[1] - self.grid[0])

    def resolve_bandwidth(self, n_paths: int, dt: float) -> float:
        """Return the fixed bandwidth, or c (J dt^2)^(-1/5)."""
        if self.bandwidth is not None:
            return self.bandwidth
        return self.bandwidth_constant * (n_paths * dt**2) ** (-0.2)


class _Chunk:
    """A block of paths with its own generator."""

    def __init__(self, size: int, x0: float, seed: np.random.SeedSequence) -> None:
        self.x = np.full(size, x0, dtype=np.float64)
        self.rng = np.random.default_rng(seed)

    def advance(self, cfg: EnsembleConfig) -> None:
        size = self.x.size
        counts = self.rng.poisson(cfg.jump.rate * cfg.dt, size)
        jumps = cfg.jump.sample(self.rng, int(counts.sum()))
        owners = np.repeat(np.arange(size), counts)
        increments = np.bincount(owners, weights=jumps, minlength=size)
        self.x = self.x + cfg.drift(self.x) * cfg.dt + increments


def iter_ensemble(cfg: EnsembleConfig) -> Iterator[NDArray[np.float64]]:
    """Yield the ensemble at t = 0, dt, ..., T, one (J,) slice at a time.

    Every chunk of paths draws from its own child of SeedSequence(seed), so the
    result does not depend on the worker count.
    """
    sizes = [
        min(cfg.chunk_size, cfg.n_paths - start)
        for start in range(0, cfg.n_paths, cfg.chunk_size)
    ]
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    chunks = [_Chunk(size, cfg.x0, seed) for size, seed in zip(sizes, seeds, strict=True)]

    def current() -> NDArray[np.float64]:
        return np.concatenate([chunk.x for chunk in chunks])

    yield current()
    if cfg.workers == 1 or len(chunks) == 1:
        for _ in range(cfg.n_steps):
            for chunk in chunks:
                chunk.advance(cfg)
            yield current()
        return

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for _ in range(cfg.n_steps):
            list(pool.map(lambda chunk: chunk.advance(cfg), chunks))
            yield current()


def simulate_ensemble(cfg: EnsembleConfig) -> NDArray[np.float64]:
    """Return the (T/dt + 1, J) matrix of simulated paths."""
    started = time.monotonic()
    samples = np.vstack(list(iter_ensemble(cfg)))
    _LOGGER.info(
        "Simulated %d paths over %d steps in %.1f s",
        cfg.n_paths,
        cfg.n_steps,
        time.monotonic() - started,
    )
    return samples


def kde_density(
    samples: ArrayLike,
    cfg: KdeConfig,
    bandwidth: float | None = None,
    method: KdeMethod = "auto",
) -> NDArray[np.float64]:
    """Gaussian-kernel density estimate of one ensemble slice on cfg.grid.

    "exact" sums every kernel; "binned" bins linearly onto a refined grid and
    convolves by FFT. "auto" picks exact for small inputs.
    """
    x = np.ravel(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise SizeError("cannot estimate a density from an empty sample")
    h = bandwidth if bandwidth is not None else cfg.bandwidth
    if h is None or h <= 0:
        raise ConfigurationError("a positive KDE bandwidth is required")
    grid = np.asarray(cfg.grid, dtype=np.float64)
    if method == "auto":
        method = "exact" if x.size * grid.size <= KDE_EXACT_LIMIT else "binned"
    if method == "exact":
        return _kde_exact(x, grid, h)
    if method == "binned":
        return _kde_binned(x, grid, h)
    raise ConfigurationError(f"unknown KDE method {method!r}")


def _kde_exact(
    x: NDArray[np.float64], grid: NDArray[np.float64], h: float
) -> NDArray[np.float64]:
    total = np.zeros(grid.size)
    block = max(1, _EXACT_BLOCK // grid.size)
    for start in range(0, x.size, block):
        z = (grid[:, None] - x[None, start : start + block]) / h
        total += np.exp(-0.5 * z**2).sum(axis=1)
    return total / (x.size * h * _SQRT_2PI)


def _kde_binned(
    x: NDArray[np.float64], grid: NDArray[np.float64], h: float
) -> NDArray[np.float64]:
    delta = (grid[1] - grid[0]) / KDE_BIN_REFINE
    margin = int(math.ceil(KDE_KERNEL_CUTOFF * h / delta))
    n_fine = 2 * margin + KDE_BIN_REFINE * (grid.size - 1) + 1
    origin = grid[0] - margin * delta

    pos = (x - origin) / delta
    inside = (pos >= 0) & (pos < n_fine - 1)
    pos = pos[inside]
    left = np.floor(pos).astype(np.intp)
    frac = pos - left
    counts = np.bincount(left, weights=1.0 - frac, minlength=n_fine)
    counts += np.bincount(left + 1, weights=frac, minlength=n_fine)

    offsets = delta * np.arange(-margin, margin + 1)
    kernel = np.exp(-0.5 * (offsets / h) ** 2)
    smooth = signal.fftconvolve(counts, kernel, mode="same")
    nodes = smooth[margin : margin + KDE_BIN_REFINE * (grid.size - 1) + 1 : KDE_BIN_REFINE]
    return np.clip(nodes, 0.0, None) / (x.size * h * _SQRT_2PI)


def savgol_smooth(values: ArrayLike, window: int, order: int) -> NDArray[np.float64]:
    """Savitzky-Golay smoothing; edge windows fit one-sided polynomials."""
    _check_savgol(window, order)
    y = np.asarray(values, dtype=np.float64)
    if y.size < window:
        raise SizeError(f"input of length {y.size} is shorter than window {window}")
    return signal.savgol_filter(y, window, order, mode="interp")


def build_kde_dataset(
    cfg: EnsembleConfig, kde: KdeConfig, method: KdeMethod = "auto"
) -> DensityDataset:
    """Simulate, estimate and smooth densities at every step t_k = k dt.

    Snapshot k has companion k + 1, so N = T/dt snapshots are reported.
    """
    return build_kde_datasets(cfg, [kde], method)[0]


def build_kde_datasets(
    cfg: EnsembleConfig, kdes: Sequence[KdeConfig], method: KdeMethod = "auto"
) -> list[DensityDataset]:
    """Build one KDE dataset per KDE setup from a single simulated ensemble."""
    if not kdes:
        raise ConfigurationError("at least one KDE setup is required")
    bandwidths = [kde.resolve_bandwidth(cfg.n_paths, cfg.dt) for kde in kdes]
    _LOGGER.info(
        "Building %d KDE dataset(s): J=%d, h=%s",
        len(kdes),
        cfg.n_paths,
        ", ".join(f"{h:.4g}" for h in bandwidths),
    )
    started = time.monotonic()
    rows: list[list[NDArray[np.float64]]] = [[] for _ in kdes]
    clamped = [0] * len(kdes)
    for ensemble_slice in iter_ensemble(cfg):
        for idx, (kde, h) in enumerate(zip(kdes, bandwidths, strict=True)):
            density = savgol_smooth(
                kde_density(ensemble_slice, kde, h, method), kde.window, kde.order
            )
            negative = density < 0
            clamped[idx] += int(negative.sum())
            density[negative] = 0.0
            rows[idx].append(density)
    for h, count in zip(bandwidths, clamped, strict=True):
        if count:
            _LOGGER.warning(
                "Clamped %d negative smoothed KDE values to zero (h=%.4g)", count, h
            )
    _LOGGER.info("KDE datasets built in %.1f s", time.monotonic() - started)

    n_snap = cfg.n_steps
    datasets = []
    for kde, h, frames, count in zip(kdes, bandwidths, rows, clamped, strict=True):
        stacked = np.vstack(frames)
        datasets.append(
            DensityDataset(
                x_grid=np.asarray(kde.grid, dtype=np.float64).copy(),
                times=cfg.dt * np.arange(n_snap, dtype=np.float64),
                values=stacked[:-1],
                companions=stacked[1:],
                diff_dt=cfg.dt,
                snapshot_dt=cfg.dt,
                source=DataSource.KDE,
                metadata={
                    "generator": cfg.describe(),
                    "bandwidth": h,
                    "savgol": {"window": kde.window, "order": kde.order},
                    "clamped_values": count,
                },
            )
        )
    return datasets


def _check_savgol(window: int, order: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ConfigurationError(f"smoothing window must be odd and positive, got {window}")
    if order < 0 or order >= window:
        raise ConfigurationError(
            f"smoothing order {order} must be nonnegative and below the window {window}"
        )
