"""Experiment coordinator: runs configured pipelines and writes their artifacts."""

from __future__ import annotations

import asyncio
import logging
import platform
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import UTC, datetime
from importlib import metadata
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from . import __version__
from .assembly import (
    RegressionSystem,
    assemble,
    compute_f_tilde,
    nonlocal_operator,
    split_train_valid,
)
from .config import DataSourceKind, Experiment, RunConfig
from .ensemble_datagen import build_kde_dataset, build_kde_datasets, simulate_ensemble
from .exceptions import ConfigurationError
from .fpe_datagen import DensityDataset, integrate_fpe
from .hyperselect import (
    HyperparameterSelector,
    PenaltyNorm,
    Selection,
    SelectionMethod,
)
from .metrics import EstimateResult, convergence_slope, eval_phi, evaluate_estimate, l2rho_error
from .model import ProblemDomain
from .storage import (
    read_dataset,
    read_system,
    write_dataset,
    write_ensemble,
    write_error_table,
    write_estimate,
    write_json,
    write_scores,
    write_system,
    write_trace,
)

_LOGGER = logging.getLogger(__name__)

_T = TypeVar("_T")


@dataclass(frozen=True)
class EstimateTask:
    """One (method, norm, mesh) estimate inside a run."""

    method: SelectionMethod
    norm: PenaltyNorm
    dx: float

    @property
    def label(self) -> str:
        """Subdirectory name of the task."""
        return f"{self.method.value}-{self.norm.value}-dx{self.dx:g}"


@dataclass
class RunSummary:
    """Outcome of a run."""

    output_dir: Path
    results: list[dict[str, Any]] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


class ExperimentCoordinator:
    """Class to run one configured experiment and write its artifacts."""

    def __init__(self, config: RunConfig, executor: ThreadPoolExecutor | None = None) -> None:
        """Initialize the coordinator."""
        self.config = config
        self._executor = executor
        self._fine_fpe: DensityDataset | None = None
        self._systems: dict[float, RegressionSystem] = {}
        self._datasets: dict[float, DensityDataset] = {}

    async def async_add_executor_job(self, func: Callable[..., _T], *args: Any) -> _T:
        """Run a blocking job in the worker pool."""
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, func, *args)

    async def async_run(self) -> RunSummary:
        """Run the configured experiment."""
        cfg = self.config
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        started_at = datetime.now(UTC)
        started = time.monotonic()
        _LOGGER.info("Running %s into %s", cfg.experiment, out)

        owns_executor = self._executor is None
        if owns_executor:
            self._executor = ThreadPoolExecutor(max_workers=cfg.workers)
        try:
            handler = {
                Experiment.FPE_GENERATE: self._async_generate,
                Experiment.ENSEMBLE_GENERATE: self._async_generate,
                Experiment.ASSEMBLE: self._async_assemble,
                Experiment.ESTIMATE: self._async_estimate,
                Experiment.CONVERGENCE_STUDY: self._async_convergence_study,
                Experiment.NORM_COMPARISON: self._async_norm_comparison,
                Experiment.METHOD_COMPARISON: self._async_method_comparison,
                Experiment.BANDWIDTH_STUDY: self._async_bandwidth_study,
            }[cfg.experiment]
            summary = await handler(out)
        finally:
            if owns_executor and self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None

        write_json(
            out / "manifest.json",
            {
                "experiment": cfg.experiment.value,
                "run_id": cfg.run_id,
                "seed": cfg.seed,
                "config": cfg.data,
                "versions": _versions(),
                "results": summary.results,
                **summary.extra,
                "timing": {
                    "started": started_at.isoformat(),
                    "finished": datetime.now(UTC).isoformat(),
                    "elapsed_s": time.monotonic() - started,
                },
            },
        )
        _LOGGER.info("Finished %s in %.1f s", cfg.experiment, time.monotonic() - started)
        return summary

    async def _async_generate(self, out: Path) -> RunSummary:
        cfg = self.config
        domain = cfg.domain
        dataset = await self.async_add_executor_job(self._dataset, domain)
        write_dataset(dataset, out / "dataset.csv")
        extra: dict[str, Any] = {"dataset": _dataset_summary(dataset)}
        if cfg.experiment is Experiment.ENSEMBLE_GENERATE and cfg.dump_samples:
            samples = await self.async_add_executor_job(
                simulate_ensemble, cfg.ensemble_config()
            )
            write_ensemble(samples, out / "samples.bin")
            extra["samples_shape"] = list(samples.shape)
        return RunSummary(out, extra=extra)

    async def _async_assemble(self, out: Path) -> RunSummary:
        domain = self.config.domain
        system = await self.async_add_executor_job(self._system, domain)
        write_system(system, out / "system")
        return RunSummary(out, extra={"system": _system_summary(system)})

    async def _async_estimate(self, out: Path) -> RunSummary:
        cfg = self.config
        task = EstimateTask(cfg.method, cfg.norm, cfg.domain.dx)
        system = await self.async_add_executor_job(self._system, cfg.domain)
        result, selection = await self.async_add_executor_job(self._estimate, system, task)
        self._write_estimate(out, result, selection)
        write_error_table(
            out / "errors.csv",
            "method",
            [f"{task.method.value}-{task.norm.value}"],
            ["lambda", "loss", "abs_error", "rel_error"],
            np.array([[result.lam, result.loss, _nan(result.abs_error), _nan(result.rel_error)]]),
        )
        extra: dict[str, Any] = {
            "lambda": result.lam,
            "system": _system_summary(system),
        }
        diagnostic = await self.async_add_executor_job(self._f_tilde_residual, cfg.domain)
        if diagnostic is not None:
            extra["f_tilde_relative_residual"] = diagnostic
        return RunSummary(out, results=[_result_summary(task, result, selection)], extra=extra)

    async def _async_convergence_study(self, out: Path) -> RunSummary:
        cfg = self.config
        tasks = [EstimateTask(cfg.method, cfg.norm, dx) for dx in cfg.meshes]
        results = await self._async_run_tasks(out, tasks)
        errors = np.array(
            [[r.lam, _nan(r.abs_error), _nan(r.rel_error)] for _, r in results]
        )
        write_error_table(
            out / "errors.csv",
            "dx",
            [f"{t.dx:g}" for t, _ in results],
            ["lambda", "abs_error", "rel_error"],
            errors,
        )
        extra: dict[str, Any] = {}
        rel = [(t.dx, r.rel_error) for t, r in results if r.rel_error is not None]
        if len(rel) >= 3:
            extra["slope"] = convergence_slope(rel)
            _LOGGER.info("Empirical convergence slope %.3f", extra["slope"])
        return RunSummary(
            out,
            results=[_result_summary(t, r, None) for t, r in results],
            extra=extra,
        )

    async def _async_norm_comparison(self, out: Path) -> RunSummary:
        cfg = self.config
        tasks = [EstimateTask(cfg.method, norm, cfg.domain.dx) for norm in cfg.study_norms]
        results = await self._async_run_tasks(out, tasks)
        write_error_table(
            out / "errors.csv",
            "norm",
            [t.norm.value for t, _ in results],
            ["lambda", "abs_error", "rel_error"],
            np.array([[r.lam, _nan(r.abs_error), _nan(r.rel_error)] for _, r in results]),
        )
        return RunSummary(out, results=[_result_summary(t, r, None) for t, r in results])

    async def _async_method_comparison(self, out: Path) -> RunSummary:
        cfg = self.config
        tasks = [
            EstimateTask(method, cfg.norm, dx)
            for method in cfg.study_methods
            for dx in cfg.meshes
        ]
        results = await self._async_run_tasks(out, tasks)
        table = {(t.method, t.dx): _nan(r.rel_error) for t, r in results}
        write_error_table(
            out / "errors.csv",
            "method",
            [m.value for m in cfg.study_methods],
            [f"dx={dx:g}" for dx in cfg.meshes],
            np.array([[table[(m, dx)] for dx in cfg.meshes] for m in cfg.study_methods]),
        )
        return RunSummary(out, results=[_result_summary(t, r, None) for t, r in results])

    async def _async_bandwidth_study(self, out: Path) -> RunSummary:
        cfg = self.config
        domain = cfg.domain
        constants = cfg.bandwidth_constants
        datasets = await self.async_add_executor_job(
            build_kde_datasets,
            cfg.ensemble_config(),
            [cfg.kde_config(domain, c) for c in constants],
            cfg.kde_method,
        )
        task = EstimateTask(cfg.method, cfg.norm, domain.dx)

        async def run_one(constant: float, dataset: DensityDataset) -> EstimateResult:
            system = await self.async_add_executor_job(self._assemble, dataset, domain)
            result, selection = await self.async_add_executor_job(self._estimate, system, task)
            self._write_estimate(out / f"c{constant:g}", result, selection)
            return result

        results = await asyncio.gather(
            *(run_one(c, ds) for c, ds in zip(constants, datasets, strict=True))
        )
        bandwidths = [float(ds.metadata["bandwidth"]) for ds in datasets]
        write_error_table(
            out / "errors.csv",
            "c",
            [f"{c:g}" for c in constants],
            ["bandwidth", "lambda", "abs_error", "rel_error"],
            np.array(
                [
                    [h, r.lam, _nan(r.abs_error), _nan(r.rel_error)]
                    for h, r in zip(bandwidths, results, strict=True)
                ]
            ),
        )
        summaries = []
        for c, h, r in zip(constants, bandwidths, results, strict=True):
            summaries.append(
                {**_result_summary(task, r, None), "bandwidth_constant": c, "bandwidth": h}
            )
        extra: dict[str, Any] = {}
        scored = [
            (r.rel_error, c)
            for c, r in zip(constants, results, strict=True)
            if r.rel_error is not None
        ]
        if len(scored) == len(constants):
            extra["best_bandwidth_constant"] = min(scored)[1]
            _LOGGER.info("Lowest error at bandwidth constant %g", extra["best_bandwidth_constant"])
        return RunSummary(out, results=summaries, extra=extra)

    async def _async_run_tasks(
        self, out: Path, tasks: list[EstimateTask]
    ) -> list[tuple[EstimateTask, EstimateResult]]:
        """Assemble each mesh once, then run every task concurrently."""
        if self.config.data_source is DataSourceKind.SYSTEM and len({t.dx for t in tasks}) > 1:
            raise ConfigurationError("a stored system has a single mesh; studies need generated data")
        systems: dict[float, RegressionSystem] = {}
        for dx in dict.fromkeys(t.dx for t in tasks):
            systems[dx] = await self.async_add_executor_job(
                self._system, self.config.domain.with_dx(dx)
            )

        async def run_one(task: EstimateTask) -> tuple[EstimateTask, EstimateResult]:
            result, selection = await self.async_add_executor_job(
                self._estimate, systems[task.dx], task
            )
            self._write_estimate(out / task.label, result, selection)
            return task, result

        return list(await asyncio.gather(*(run_one(t) for t in tasks)))

    def _write_estimate(
        self, directory: Path, result: EstimateResult, selection: Selection
    ) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        write_estimate(result, directory / "estimate.csv")
        if selection.trace is not None:
            write_trace(selection.trace, directory / "trace.csv")
        write_scores(selection, directory / "scores.csv")

    def _dataset(self, domain: ProblemDomain) -> DensityDataset:
        """Return the density data observed on the domain's mesh."""
        cfg = self.config
        if domain.dx in self._datasets:
            return self._datasets[domain.dx]
        source = self._source()
        if source is DataSourceKind.FPE:
            if self._fine_fpe is None:
                self._fine_fpe = integrate_fpe(cfg.drift, cfg.levy, cfg.fpe_config(domain))
            dataset = self._fine_fpe.coarsen_to(domain.dx)
        elif source is DataSourceKind.ENSEMBLE:
            dataset = build_kde_dataset(
                cfg.ensemble_config(), cfg.kde_config(domain), cfg.kde_method
            )
        elif source is DataSourceKind.DATASET:
            path = cfg.data_path
            if path is None:
                raise ConfigurationError("data.path is required for source dataset")
            dataset = read_dataset(path).coarsen_to(domain.dx)
        else:
            raise ConfigurationError("a stored system carries no density data")
        self._datasets[domain.dx] = dataset
        return dataset

    def _source(self) -> DataSourceKind:
        """Generation runs pick their own source; the rest follow data.source."""
        experiment = self.config.experiment
        if experiment is Experiment.FPE_GENERATE:
            return DataSourceKind.FPE
        if experiment is Experiment.ENSEMBLE_GENERATE:
            return DataSourceKind.ENSEMBLE
        return self.config.data_source

    def _system(self, domain: ProblemDomain) -> RegressionSystem:
        """Return the regression system on the domain's mesh."""
        cfg = self.config
        if domain.dx in self._systems:
            return self._systems[domain.dx]
        if cfg.data_source is DataSourceKind.SYSTEM:
            path = cfg.data_path
            if path is None:
                raise ConfigurationError("data.path is required for source system")
            system = read_system(path)
        else:
            system = self._assemble(self._dataset(domain), domain)
        self._systems[domain.dx] = system
        return system

    def _assemble(self, dataset: DensityDataset, domain: ProblemDomain) -> RegressionSystem:
        cfg = self.config
        return assemble(
            dataset, domain, cfg.drift, sigma=cfg.sigma(), skip_snapshots=cfg.skip_snapshots
        )

    def _estimate(
        self, system: RegressionSystem, task: EstimateTask
    ) -> tuple[EstimateResult, Selection]:
        """Split, select lambda and evaluate one estimate."""
        cfg = self.config
        split = split_train_valid(system, cfg.split_policy)
        selector = HyperparameterSelector.from_split(split, task.norm)
        phi_true = cfg.levy(system.r_grid)

        def monitor(c: np.ndarray) -> float:
            return l2rho_error(eval_phi(system, c), phi_true, system.rho_hat, system.dr)[1]

        if task.method is SelectionMethod.BILEVEL:
            selection = selector.bilevel_optimize(cfg.bilevel, monitor)
        elif task.method is SelectionMethod.LCURVE:
            selection = selector.lcurve_select(cfg.lambda_grid)
        else:
            selection = selector.gcv_select(cfg.lambda_grid)
        result = evaluate_estimate(
            system,
            selection.c,
            selection.lam,
            selector.upper_loss(selection.c),
            cfg.levy,
            task.method.value,
            task.norm.value,
        )
        return result, selection

    def _f_tilde_residual(self, domain: ProblemDomain) -> float | None:
        """Relative mismatch between f~ and the nonlocal term of the true density."""
        dataset = self._datasets.get(domain.dx)
        if dataset is None:
            return None
        cfg = self.config
        ds = dataset.drop_snapshots(cfg.skip_snapshots)
        f_tilde = compute_f_tilde(ds, cfg.drift, domain, cfg.sigma())
        oracle = nonlocal_operator(ds, domain, cfg.levy)
        scale = float(np.linalg.norm(oracle))
        if scale == 0.0:
            return None
        return float(np.linalg.norm(f_tilde - oracle)) / scale


def run_config(config: RunConfig) -> RunSummary:
    """Run a configuration to completion on a fresh event loop."""
    return asyncio.run(ExperimentCoordinator(config).async_run())


def _nan(value: float | None) -> float:
    return float("nan") if value is None else value


def _versions() -> dict[str, str]:
    versions = {"levyrkhs": __version__, "python": platform.python_version()}
    for package in ("numpy", "scipy", "voluptuous"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def _dataset_summary(dataset: DensityDataset) -> dict[str, Any]:
    return {
        "source": dataset.source.value,
        "n_snapshots": dataset.n_snapshots,
        "n_x": int(dataset.x_grid.size),
        "dx": dataset.dx,
        "diff_dt": dataset.diff_dt,
        "min_mass": float(dataset.mass().min()),
        "max_mass": float(dataset.mass().max()),
        "metadata": dataset.metadata,
    }


def _system_summary(system: RegressionSystem) -> dict[str, Any]:
    return {
        "n_snapshots": system.n_snapshots,
        "n_interior": system.n_interior,
        "n_basis": system.n_basis,
        "dr": system.dr,
        "Z": system.Z,
        "dropped_indices": list(system.dropped_indices),
    }


def _result_summary(
    task: EstimateTask, result: EstimateResult, selection: Selection | None
) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "method": task.method.value,
        "norm": task.norm.value,
        "dx": task.dx,
        "lambda": result.lam,
        "loss": result.loss,
        "abs_error": result.abs_error,
        "rel_error": result.rel_error,
    }
    if selection is not None:
        if selection.trace is not None:
            summary["iterations"] = len(selection.trace)
            summary["stop_reason"] = str(selection.trace.stop_reason)
        summary["fallback"] = selection.fallback
    return summary
