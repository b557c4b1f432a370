"""Pytest configuration and fixtures for levyrkhs tests."""

from __future__ import annotations

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from levyrkhs.assembly import RegressionSystem, SystemSplit, assemble, split_train_valid
from levyrkhs.fpe_datagen import DensityDataset, FpeConfig, solve_fpe
from levyrkhs.model import DriftSpec, LevyDensitySpec, ProblemDomain


@pytest.fixture(scope="session")
def toy_domain() -> ProblemDomain:
    """Return the coarse domain used by fast end-to-end tests."""
    return ProblemDomain(L=5.0, R0=2.0, dx=0.05)


@pytest.fixture(scope="session")
def toy_fpe_config(toy_domain: ProblemDomain) -> FpeConfig:
    """Return a short FPE run on the coarse domain."""
    return FpeConfig(
        domain=toy_domain,
        solver_dx=0.05,
        solver_dt=0.00125,
        horizon=0.5,
        n_snapshots=10,
    )


@pytest.fixture(scope="session")
def toy_dataset(toy_fpe_config: FpeConfig) -> DensityDataset:
    """Return Gaussian-decay snapshots with drift -0.5x."""
    return solve_fpe(
        DriftSpec.linear(-0.5), LevyDensitySpec.gaussian_decay(), toy_fpe_config
    )


@pytest.fixture(scope="session")
def toy_system(toy_dataset: DensityDataset, toy_domain: ProblemDomain) -> RegressionSystem:
    """Return the regression system of the toy dataset."""
    return assemble(toy_dataset, toy_domain, DriftSpec.linear(-0.5), sigma=1.0)


@pytest.fixture(scope="session")
def toy_split(toy_system: RegressionSystem) -> SystemSplit:
    """Return the interleaved split of the toy system."""
    return split_train_valid(toy_system)


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a seeded generator."""
    return np.random.default_rng(20240611)


@pytest.fixture
def toy_config_data(tmp_path: Path) -> dict[str, Any]:
    """Return a fast estimate configuration writing under tmp_path."""
    return {
        "experiment": "estimate",
        "seed": 0,
        "output_dir": str(tmp_path / "runs"),
        "domain": {"L": 5.0, "R0": 2.0, "dx": 0.05},
        "drift": {"kind": "linear", "slope": -0.5},
        "levy": {"kind": "gaussian_decay"},
        "data": {"source": "fpe"},
        "fpe": {
            "solver_dx": 0.05,
            "solver_dt": 0.00125,
            "horizon": 0.5,
            "n_snapshots": 10,
        },
        "selection": {
            "method": "bilevel",
            "norm": "rkhs",
            "bilevel": {"eta0": 0.05, "iota": 0.9, "max_iters": 40, "stop_window": 10},
        },
    }


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[dict[str, Any]], Path]:
    """Return a helper that writes a configuration dict as JSON."""

    def _write(data: dict[str, Any], name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    return _write
