"""Tests for regression system assembly."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
import pytest

from levyrkhs.assembly import (
    SplitPolicy,
    assemble,
    build_kernel,
    build_Q,
    build_rho_hat,
    compute_f_tilde,
    interior_indices,
    nonlocal_operator,
    raw_second_differences,
    split_train_valid,
)
from levyrkhs.exceptions import AssemblyError, ConfigurationError, SplitError
from levyrkhs.fpe_datagen import (
    DataSource,
    DensityDataset,
    DifferenceSpacing,
    FpeConfig,
    solve_fpe,
)
from levyrkhs.model import DriftSpec, LevyDensitySpec, ProblemDomain


def _dataset(x_grid: np.ndarray, rows: np.ndarray) -> DensityDataset:
    times = 0.1 * np.arange(rows.shape[0])
    return DensityDataset(
        x_grid=x_grid,
        times=times,
        values=rows,
        companions=rows.copy(),
        diff_dt=0.1,
        snapshot_dt=0.1,
        source=DataSource.FPE,
    )


class TestInteriorIndices:
    """Test cases for the interior region."""

    def test_bounds(self, toy_dataset, toy_domain):
        """Test the interior spans [-L + R0, L - R0]."""
        lo, hi = interior_indices(toy_dataset, toy_domain)

        assert (lo, hi) == (40, 161)
        assert toy_dataset.x_grid[lo] == pytest.approx(-3.0)
        assert toy_dataset.x_grid[hi - 1] == pytest.approx(3.0)

    def test_grid_mismatch(self, toy_dataset):
        """Test a dataset that does not cover the domain is rejected."""
        with pytest.raises(ConfigurationError):
            interior_indices(toy_dataset, ProblemDomain(L=4.0, R0=2.0, dx=0.05))


class TestExplorationMeasure:
    """Test cases for rho_hat and the kernel."""

    def test_normalization(self, toy_system):
        """Test sum rho_hat dr = 1."""
        assert np.sum(toy_system.rho_hat) * toy_system.dr == pytest.approx(1.0, abs=1e-12)
        assert np.all(toy_system.rho_hat > 0.0)

    def test_unimodal_on_fpe_data(self, toy_system):
        """Test rho_hat of the Gaussian-decay FPE data rises to one peak and then falls."""
        rho = toy_system.rho_hat
        peak = int(np.argmax(rho))
        steps = np.diff(rho)
        tol = 1e-12 * rho.max()

        assert toy_system.dropped_indices == ()
        assert rho.size == 40
        assert np.all(rho > 0.0)
        assert np.all(steps[:peak] >= -tol)
        assert np.all(steps[peak:] <= tol)

    def test_kernel_psd(self, toy_system):
        """Test Gbar is symmetric positive semi-definite."""
        G = toy_system.Gbar

        np.testing.assert_array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() >= -1e-10 * np.linalg.norm(G)

    def test_uniform_second_differences(self):
        """Test |Q| constant over all entries gives a uniform rho_hat."""
        raw = np.full((3, 7, 5), -2.0)

        rho, Z = build_rho_hat(raw, 0.1)

        np.testing.assert_allclose(rho, 1.0 / (5 * 0.1))
        assert Z == pytest.approx(2.0 * 7 * 0.1 * 5 * 0.1)

    def test_nothing_explored(self, toy_domain):
        """Test constant snapshots raise AssemblyError."""
        rows = np.full((3, toy_domain.nx), 0.1)

        with pytest.raises(AssemblyError, match="explores nothing"):
            assemble(_dataset(toy_domain.x_grid, rows), toy_domain, DriftSpec.linear(0.0))

    def test_affine_snapshots_annihilated(self, toy_domain):
        """Test second differences of affine snapshots vanish."""
        x = toy_domain.x_grid
        rows = np.vstack([10.0 + x, 10.0 - 0.5 * x])

        raw = raw_second_differences(_dataset(x, rows), toy_domain)

        assert np.max(np.abs(raw)) <= 1e-12

    def test_quadratic_second_differences(self, toy_domain):
        """Test Q[x^2](x, r_k) = 2 r_k^2 at every interior point."""
        x = toy_domain.x_grid
        raw = raw_second_differences(_dataset(x, np.vstack([x**2])), toy_domain)

        r = toy_domain.r_grid
        np.testing.assert_allclose(raw[0], np.tile(2.0 * r**2, (121, 1)), atol=1e-10)

    def test_toy_kernel(self):
        """Test the Gram matrix of a two-column Q divided by rho rho^T."""
        Q = np.array([[1.0, 0.0], [1.0, 1.0]])

        np.testing.assert_array_equal(build_kernel(Q, [1.0, 1.0]), [[2.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(build_kernel(Q, [0.5, 2.0]), [[8.0, 1.0], [1.0, 0.25]])

    def test_unexplored_lags_dropped(self, caplog):
        """Test r-grid points with zero rho_hat are removed with a warning."""
        domain = ProblemDomain(L=1.0, R0=0.4, dx=0.1)
        x = np.linspace(-1.0, 1.0, 21)
        rows = np.tile(1.0 + (np.arange(21) % 2), (3, 1)).astype(np.float64)

        with caplog.at_level(logging.WARNING):
            system = assemble(_dataset(x, rows), domain, DriftSpec.linear(0.0))

        assert system.dropped_indices == (1, 3)
        assert system.n_basis == 2
        np.testing.assert_allclose(system.r_grid, [0.1, 0.3])
        assert "unexplored" in caplog.text


class TestScaling:
    """Test cases for the algebraic scalings of the assembly."""

    def test_density_scaling(self, toy_dataset, toy_domain):
        """Test scaling p by c scales Q by c and Gbar by c^2, leaving rho_hat."""
        scaled = replace(
            toy_dataset,
            values=2.0 * toy_dataset.values,
            companions=2.0 * toy_dataset.companions,
        )

        Q, raw = build_Q(toy_dataset, toy_domain)
        Q2, raw2 = build_Q(scaled, toy_domain)
        rho, _ = build_rho_hat(raw, toy_dataset.dx)
        rho2, _ = build_rho_hat(raw2, scaled.dx)

        np.testing.assert_array_equal(Q2, 2.0 * Q)
        np.testing.assert_array_equal(rho2, rho)
        np.testing.assert_allclose(build_kernel(Q2, rho2), 4.0 * build_kernel(Q, rho), rtol=1e-12)

    def test_snapshot_order(self, toy_dataset, toy_domain):
        """Test Gbar does not depend on the snapshot order."""
        reversed_ds = replace(
            toy_dataset,
            values=toy_dataset.values[::-1].copy(),
            companions=toy_dataset.companions[::-1].copy(),
        )
        drift = DriftSpec.linear(-0.5)

        forward = assemble(toy_dataset, toy_domain, drift)
        backward = assemble(reversed_ds, toy_domain, drift)

        np.testing.assert_allclose(backward.Gbar, forward.Gbar, rtol=1e-10)


class TestFTilde:
    """Test cases for the regression target."""

    def test_matches_nonlocal_term_at_solver_spacing(self, toy_domain):
        """Test f~ recovers the solver's jump term when differenced at solver dt."""
        cfg = FpeConfig(
            toy_domain,
            solver_dx=0.05,
            solver_dt=0.00125,
            horizon=0.2,
            n_snapshots=4,
            difference_spacing=DifferenceSpacing.SOLVER,
        )
        drift, levy = DriftSpec.linear(-0.5), LevyDensitySpec.gaussian_decay()
        ds = solve_fpe(drift, levy, cfg)

        f_tilde = compute_f_tilde(ds, drift, toy_domain, sigma=1.0)
        oracle = nonlocal_operator(ds, toy_domain, levy)

        assert f_tilde.shape == oracle.shape == (4, 121)
        error = np.max(np.abs(f_tilde[:, 1:-1] - oracle[:, 1:-1]))
        assert error <= 1e-8 * np.max(np.abs(oracle))

    def test_observation_spacing_error_halves_with_dt(self, toy_domain):
        """Test the f~ error at observation spacing is first order in the snapshot spacing."""
        drift, levy = DriftSpec.linear(-0.5), LevyDensitySpec.gaussian_decay()
        errors = []
        for n_snapshots in (10, 20):
            cfg = FpeConfig(
                toy_domain,
                solver_dx=0.05,
                solver_dt=0.00125,
                horizon=0.5,
                n_snapshots=n_snapshots,
            )
            ds = solve_fpe(drift, levy, cfg)
            assert ds.diff_dt == pytest.approx(0.5 / n_snapshots)
            residual = compute_f_tilde(ds, drift, toy_domain, sigma=1.0) - nonlocal_operator(
                ds, toy_domain, levy
            )
            # compare on the snapshot times both runs share
            errors.append(np.linalg.norm(residual[:: n_snapshots // 10, 1:-1]))

        assert 0.4 < errors[1] / errors[0] < 0.6

    def test_coarsened_mesh_error_shrinks_with_dx(self):
        """Test f~ on a coarsened mesh approaches the jump term as the mesh is refined."""
        fine = ProblemDomain(L=5.0, R0=2.0, dx=0.025)
        cfg = FpeConfig(
            fine,
            solver_dx=0.025,
            solver_dt=0.0005,
            horizon=0.2,
            n_snapshots=4,
            difference_spacing=DifferenceSpacing.SOLVER,
        )
        drift, levy = DriftSpec.linear(-0.5), LevyDensitySpec.gaussian_decay()
        ds = solve_fpe(drift, levy, cfg)

        residuals = []
        for dx in (0.05, 0.1):
            domain = fine.with_dx(dx)
            coarse = ds.coarsen_to(dx)
            residuals.append(
                compute_f_tilde(coarse, drift, domain, sigma=1.0)
                - nonlocal_operator(coarse, domain, levy)
            )
        # interior nodes of the 0.1 mesh, skipping the one-sided endpoints
        error_05 = np.linalg.norm(residuals[0][:, 2:-2:2])
        error_10 = np.linalg.norm(residuals[1][:, 1:-1])

        assert error_05 < 0.6 * error_10

    def test_constant_density_linear_drift(self, toy_domain):
        """Test only the advection term b' p survives for a constant density."""
        rows = np.full((2, toy_domain.nx), 0.3)

        ds = _dataset(toy_domain.x_grid, rows)
        f_tilde = compute_f_tilde(ds, DriftSpec.linear(-0.5), toy_domain, sigma=1.0)

        np.testing.assert_allclose(f_tilde, -0.15, rtol=1e-10)

    def test_endpoint_stencils_are_exact_for_quadratics(self, toy_domain):
        """Test the one-sided stencils differentiate quadratics exactly."""
        x = toy_domain.x_grid
        rows = np.vstack([20.0 + x**2])

        ds = _dataset(x, rows)
        f_tilde = compute_f_tilde(ds, DriftSpec.linear(0.0), toy_domain, sigma=1.0)

        np.testing.assert_allclose(f_tilde, -1.0, rtol=1e-8)


class TestAssemble:
    """Test cases for the full system."""

    def test_shapes(self, toy_system):
        """Test N M rows and n columns."""
        assert toy_system.n_snapshots == 10
        assert toy_system.n_interior == 121
        assert toy_system.n_basis == 40
        assert toy_system.Q.shape == (1210, 40)
        assert toy_system.row_index(2, 5) == 247

    def test_design_matrix(self, toy_system):
        """Test Abar = Q Gbar dr."""
        np.testing.assert_allclose(
            toy_system.design_matrix, toy_system.Q @ toy_system.Gbar * toy_system.dr
        )

    def test_skip_snapshots(self, toy_dataset, toy_domain):
        """Test leading snapshots can be excluded."""
        system = assemble(toy_dataset, toy_domain, DriftSpec.linear(-0.5), skip_snapshots=2)

        assert system.n_snapshots == 8
        np.testing.assert_allclose(system.times, toy_dataset.times[2:])


class TestSplit:
    """Test cases for the train/validation split."""

    def test_interleave(self, toy_system):
        """Test even positions train and odd positions validate."""
        split = split_train_valid(toy_system, SplitPolicy.INTERLEAVE)

        assert split.train.snapshot_ids == (0, 2, 4, 6, 8)
        assert split.valid.snapshot_ids == (1, 3, 5, 7, 9)
        np.testing.assert_array_equal(split.train.Q[:121], toy_system.Q[:121])
        np.testing.assert_array_equal(split.valid.f[:121], toy_system.f[121:242])
        assert split.train.Gbar is toy_system.Gbar

    def test_block(self, toy_system):
        """Test the first half trains."""
        system = toy_system.subset(range(5))

        split = split_train_valid(system, SplitPolicy.BLOCK)

        assert split.train.snapshot_ids == (0, 1, 2)
        assert split.valid.snapshot_ids == (3, 4)

    def test_partition(self, toy_system):
        """Test both blocks are nonempty and partition the snapshots."""
        for policy in SplitPolicy:
            split = split_train_valid(toy_system, policy)
            ids = split.train.snapshot_ids + split.valid.snapshot_ids

            assert split.train.n_snapshots > 0 and split.valid.n_snapshots > 0
            assert sorted(ids) == list(range(10))

    def test_single_snapshot(self, toy_system):
        """Test one snapshot cannot be split."""
        with pytest.raises(SplitError):
            split_train_valid(toy_system.subset([0]))
