"""Tests for dataset, system and artifact files."""

from __future__ import annotations

import numpy as np
import pytest

from levyrkhs.exceptions import ConfigurationError
from levyrkhs.hyperselect import BilevelRecord, BilevelTrace
from levyrkhs.storage import (
    read_csv,
    read_dataset,
    read_ensemble,
    read_json,
    read_system,
    write_dataset,
    write_ensemble,
    write_error_table,
    write_json,
    write_system,
    write_trace,
)


class TestDatasetFiles:
    """Test cases for the dataset CSV and sidecar."""

    def test_round_trip(self, toy_dataset, tmp_path):
        """Test a written dataset loads back bit for bit."""
        path = tmp_path / "data.csv"

        sidecar = write_dataset(toy_dataset, path)
        loaded = read_dataset(path)

        assert sidecar == tmp_path / "data.json"
        np.testing.assert_array_equal(loaded.x_grid, toy_dataset.x_grid)
        np.testing.assert_array_equal(loaded.values, toy_dataset.values)
        np.testing.assert_array_equal(loaded.companions, toy_dataset.companions)
        assert loaded.diff_dt == toy_dataset.diff_dt
        assert loaded.source is toy_dataset.source

    def test_layout(self, toy_dataset, tmp_path):
        """Test one row per distinct time with the grid in the header."""
        path = tmp_path / "data.csv"
        write_dataset(toy_dataset, path)

        header, body = read_csv(path)

        assert header[0] == "time"
        assert len(header) == toy_dataset.x_grid.size + 1
        assert body.shape == (toy_dataset.n_snapshots + 1, toy_dataset.x_grid.size + 1)
        assert np.all(np.diff(body[:, 0]) > 0)

    def test_missing(self, tmp_path):
        """Test a missing file is a configuration error."""
        with pytest.raises(ConfigurationError):
            read_dataset(tmp_path / "absent.csv")


class TestSystemFiles:
    """Test cases for the binary system layout."""

    def test_round_trip(self, toy_system, tmp_path):
        """Test Q, Gbar and the vectors survive a round trip."""
        write_system(toy_system, tmp_path / "system")

        loaded = read_system(tmp_path / "system")

        np.testing.assert_array_equal(loaded.Q, toy_system.Q)
        np.testing.assert_array_equal(loaded.Gbar, toy_system.Gbar)
        np.testing.assert_array_equal(loaded.f, toy_system.f)
        np.testing.assert_array_equal(loaded.rho_hat, toy_system.rho_hat)
        assert loaded.snapshot_ids == toy_system.snapshot_ids
        assert loaded.dr == toy_system.dr

    def test_shapes_manifest(self, toy_system, tmp_path):
        """Test the manifest records row-major float64 shapes."""
        write_system(toy_system, tmp_path)

        shapes = read_json(tmp_path / "shapes.json")

        assert shapes["Q"] == [1210, 40]
        assert shapes["dtype"] == "float64"
        assert (tmp_path / "Q.bin").stat().st_size == 1210 * 40 * 8


class TestArtifacts:
    """Test cases for traces, tables and ensembles."""

    def test_trace_columns(self, tmp_path):
        """Test the trace header and the optional error column."""
        trace = BilevelTrace(
            [BilevelRecord(1, 0.1, 2.0, -0.1, -3.0, 0.5), BilevelRecord(2, 0.2, 1.5, -0.1, -1.0, 0.4)]
        )
        path = tmp_path / "trace.csv"

        write_trace(trace, path)
        header, body = read_csv(path)

        assert header == ["k", "gamma", "loss", "v", "grad", "error"]
        np.testing.assert_allclose(body[:, 0], [1, 2])
        np.testing.assert_allclose(body[:, 5], [0.5, 0.4])

    def test_empty_trace(self, tmp_path):
        """Test an empty trace still has its header."""
        path = tmp_path / "trace.csv"

        write_trace(BilevelTrace(), path)

        assert path.read_text(encoding="utf-8") == "k,gamma,loss,v,grad\n"

    def test_error_table(self, tmp_path):
        """Test labelled rows and columns."""
        path = tmp_path / "errors.csv"

        write_error_table(
            path, "method", ["bilevel", "gcv"], ["0.05", "0.1"], np.array([[0.1, 0.2], [0.3, 0.4]])
        )

        assert path.read_text(encoding="utf-8").splitlines() == [
            "method,0.05,0.1",
            "bilevel,0.10000000000000001,0.20000000000000001",
            "gcv,0.29999999999999999,0.40000000000000002",
        ]

    def test_ensemble(self, rng, tmp_path):
        """Test the raw ensemble dump reloads with its shape."""
        samples = rng.standard_normal((3, 7))
        path = tmp_path / "ensemble.bin"

        write_ensemble(samples, path)

        np.testing.assert_array_equal(read_ensemble(path), samples)

    def test_json_arrays(self, tmp_path):
        """Test numpy values serialize as plain JSON."""
        write_json(tmp_path / "x.json", {"a": np.arange(3), "b": np.float64(0.5)})

        assert read_json(tmp_path / "x.json") == {"a": [0, 1, 2], "b": 0.5}

    def test_json_not_object(self, tmp_path):
        """Test a JSON list is rejected."""
        (tmp_path / "x.json").write_text("[1, 2]", encoding="utf-8")

        with pytest.raises(ConfigurationError):
            read_json(tmp_path / "x.json")
