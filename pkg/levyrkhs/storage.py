"""Reading and writing datasets, systems and run artifacts."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .assembly import RegressionSystem
from .const import CSV_FLOAT_FORMAT, GRID_TOL
from .exceptions import ConfigurationError
from .fpe_datagen import DataSource, DensityDataset
from .hyperselect import BilevelTrace, Selection
from .metrics import EstimateResult

_LOGGER = logging.getLogger(__name__)

SYSTEM_SHAPES = "shapes.json"


def write_csv(path: Path, header: Sequence[str], columns: Iterable[NDArray[Any]]) -> None:
    """Write equal-length columns as a headed CSV with round-trip floats."""
    table = np.column_stack([np.asarray(col, dtype=np.float64) for col in columns])
    np.savetxt(
        path,
        table,
        delimiter=",",
        header=",".join(header),
        comments="",
        fmt=CSV_FLOAT_FORMAT,
    )


def read_csv(path: Path) -> tuple[list[str], NDArray[np.float64]]:
    """Return the header and the (rows, columns) body of a CSV file."""
    try:
        with path.open(encoding="utf-8") as handle:
            header = handle.readline().strip().split(",")
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as err:
        raise ConfigurationError(f"cannot read CSV {path}: {err}") from err
    return header, body


def write_json(path: Path, payload: Mapping[str, Any]) -> None:
    """Write sorted, indented JSON."""
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )


def read_json(path: Path) -> dict[str, Any]:
    """Read a JSON object."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read JSON {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} does not hold a JSON object")
    return data


def write_dataset(ds: DensityDataset, path: Path) -> Path:
    """Write the dataset CSV (time, then x values) and its JSON sidecar."""
    times, rows = ds.frames()
    header = ["time", *(format(x, ".17g") for x in ds.x_grid)]
    write_csv(path, header, [times, *rows.T])
    sidecar = path.with_suffix(".json")
    write_json(
        sidecar,
        {
            "times": ds.times,
            "diff_dt": ds.diff_dt,
            "snapshot_dt": ds.snapshot_dt,
            "source": ds.source.value,
            "n_x": int(ds.x_grid.size),
            "metadata": ds.metadata,
        },
    )
    _LOGGER.info("Wrote dataset with %d snapshots to %s", ds.n_snapshots, path)
    return sidecar


def read_dataset(path: Path) -> DensityDataset:
    """Load a dataset written by write_dataset."""
    meta = read_json(path.with_suffix(".json"))
    header, body = read_csv(path)
    x_grid = np.array([float(v) for v in header[1:]])
    frame_times, rows = body[:, 0], body[:, 1:]
    times = np.asarray(meta["times"], dtype=np.float64)
    diff_dt = float(meta["diff_dt"])

    def locate(t: float) -> int:
        hits = np.flatnonzero(np.abs(frame_times - t) <= GRID_TOL * max(1.0, abs(t)))
        if hits.size == 0:
            raise ConfigurationError(f"{path} has no row at time {t}")
        return int(hits[0])

    values = rows[[locate(t) for t in times]]
    companions = rows[[locate(t + diff_dt) for t in times]]
    return DensityDataset(
        x_grid=x_grid,
        times=times,
        values=values,
        companions=companions,
        diff_dt=diff_dt,
        snapshot_dt=float(meta["snapshot_dt"]),
        source=DataSource(meta["source"]),
        metadata=dict(meta.get("metadata") or {}),
    )


def write_system(system: RegressionSystem, directory: Path) -> None:
    """Write Q and Gbar as raw float64 with a shape manifest; vectors as CSV."""
    directory.mkdir(parents=True, exist_ok=True)
    system.Q.astype(np.float64).tofile(directory / "Q.bin")
    system.Gbar.astype(np.float64).tofile(directory / "Gbar.bin")
    write_json(
        directory / SYSTEM_SHAPES,
        {
            "Q": list(system.Q.shape),
            "Gbar": list(system.Gbar.shape),
            "dtype": "float64",
            "order": "C",
            "dr": system.dr,
            "Z": system.Z,
            "x_interior": system.x_interior,
            "times": system.times,
            "dropped_indices": list(system.dropped_indices),
            "snapshot_ids": list(system.snapshot_ids),
        },
    )
    write_csv(directory / "f.csv", ["f"], [system.f])
    write_csv(directory / "rho_hat.csv", ["rho_hat"], [system.rho_hat])
    write_csv(directory / "r_grid.csv", ["r"], [system.r_grid])
    _LOGGER.info("Wrote regression system to %s", directory)


def read_system(directory: Path) -> RegressionSystem:
    """Load a system written by write_system."""
    shapes = read_json(directory / SYSTEM_SHAPES)
    try:
        Q = np.fromfile(directory / "Q.bin", dtype=np.float64).reshape(shapes["Q"])
        Gbar = np.fromfile(directory / "Gbar.bin", dtype=np.float64).reshape(shapes["Gbar"])
    except (OSError, ValueError) as err:
        raise ConfigurationError(f"cannot read system matrices in {directory}: {err}") from err
    return RegressionSystem(
        Q=Q,
        f=read_csv(directory / "f.csv")[1][:, 0],
        rho_hat=read_csv(directory / "rho_hat.csv")[1][:, 0],
        Z=float(shapes["Z"]),
        Gbar=Gbar,
        r_grid=read_csv(directory / "r_grid.csv")[1][:, 0],
        dr=float(shapes["dr"]),
        x_interior=np.asarray(shapes["x_interior"], dtype=np.float64),
        times=np.asarray(shapes["times"], dtype=np.float64),
        dropped_indices=tuple(shapes["dropped_indices"]),
        snapshot_ids=tuple(shapes["snapshot_ids"]),
    )


def write_trace(trace: BilevelTrace, path: Path) -> None:
    """Write k, gamma, loss, v, grad (and error when monitored)."""
    records = trace.records
    columns: list[NDArray[Any]] = [
        np.array([rec.k for rec in records]),
        trace.gammas,
        trace.losses,
        np.array([rec.velocity for rec in records]),
        np.array([rec.grad for rec in records]),
    ]
    header = ["k", "gamma", "loss", "v", "grad"]
    if records and records[0].error is not None:
        header.append("error")
        columns.append(np.array([rec.error for rec in records], dtype=np.float64))
    if not records:
        path.write_text(",".join(header) + "\n", encoding="utf-8")
        return
    write_csv(path, header, columns)


def write_estimate(result: EstimateResult, path: Path) -> None:
    """Write r, phi_hat, phi_true and rho_hat."""
    phi_true = (
        result.phi_true
        if result.phi_true is not None
        else np.full(result.r_grid.size, np.nan)
    )
    write_csv(
        path,
        ["r", "phi_hat", "phi_true", "rho_hat"],
        [result.r_grid, result.phi_hat, phi_true, result.rho_hat],
    )


def write_scores(selection: Selection, path: Path) -> None:
    """Write the score curve of an L-curve or GCV selection."""
    if selection.lambda_grid is None or selection.scores is None:
        return
    write_csv(path, ["lambda", "score"], [selection.lambda_grid, selection.scores])


def write_error_table(
    path: Path,
    row_label: str,
    rows: Sequence[str],
    columns: Sequence[str],
    values: NDArray[np.float64],
) -> None:
    """Write a labelled table such as method x mesh relative errors."""
    lines = [",".join([row_label, *columns])]
    for label, row in zip(rows, values, strict=True):
        lines.append(",".join([label, *(CSV_FLOAT_FORMAT % v for v in row)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ensemble(samples: NDArray[np.float64], path: Path) -> None:
    """Dump ensemble samples as row-major [time][path] float64."""
    np.ascontiguousarray(samples, dtype=np.float64).tofile(path)
    write_json(path.with_suffix(".json"), {"shape": list(samples.shape), "dtype": "float64"})


def read_ensemble(path: Path) -> NDArray[np.float64]:
    """Load an ensemble written by write_ensemble."""
    shape = read_json(path.with_suffix(".json"))["shape"]
    return np.fromfile(path, dtype=np.float64).reshape(shape)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
