"""Tests for regularization parameter selection."""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from levyrkhs.assembly import split_train_valid
from levyrkhs.exceptions import ConfigurationError, DivergenceError, StateError
from levyrkhs.hyperselect import (
    BilevelConfig,
    HyperparameterSelector,
    PenaltyNorm,
    SelectionMethod,
    StopReason,
    bilevel_optimize,
    default_lambda_grid,
    gcv_select,
    hypergradient,
    lcurve_select,
    lower_solve,
    penalty_root,
    selector_for,
    upper_loss,
)


def _scalar_selector(f_valid: float = 0.2, a_valid: float = 1.0) -> HyperparameterSelector:
    """c(lambda) = 1 / (1 + lambda); the validation loss vanishes at lambda = 1 / f_valid - 1."""
    return HyperparameterSelector([[1.0]], [1.0], [[a_valid]], [f_valid], [[1.0]])


def _blur_problem(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (A, f, c_true) of a noisy 32-point Gaussian deblurring problem."""
    n = 32
    idx = np.arange(n)
    A = np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / 2.0) ** 2)
    c_true = np.sin(np.pi * idx / (n - 1)) + 0.5 * np.sin(3 * np.pi * idx / (n - 1))
    f = A @ c_true + 1e-2 * rng.standard_normal(n)
    return A, f, c_true


def _picard_problem(
    rng: np.random.Generator, noise: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (A, f, c_true) with singular values 10^(-i/4) and solution coefficients s_i."""
    n = 32
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = 10.0 ** (-np.arange(n) / 4.0)
    A = (U * s) @ V.T
    c_true = V @ s
    f = A @ c_true + noise * rng.standard_normal(n)
    return A, f, c_true


def _oracle_index(selector: HyperparameterSelector, grid: np.ndarray, c_true: np.ndarray) -> int:
    errors = [np.linalg.norm(selector.lower_solve(g).c - c_true) for g in np.log10(grid)]
    return int(np.argmin(errors))


def _gradient_pair(
    selector: HyperparameterSelector, gamma: float, h: float
) -> tuple[float, float, float]:
    """Return (analytic, central difference, loss) of the validation loss at gamma."""

    def loss(g: float) -> float:
        return selector.upper_loss(selector.lower_solve(g).c)

    c = selector.lower_solve(gamma).c
    numeric = (loss(gamma + h) - loss(gamma - h)) / (2.0 * h)
    return selector.hypergradient(gamma, c), numeric, loss(gamma)


def _overdetermined(
    rng: np.random.Generator, noise: float = 0.0
) -> tuple[HyperparameterSelector, np.ndarray]:
    A = rng.standard_normal((40, 5))
    c_true = rng.standard_normal(5)
    f = A @ c_true + noise * rng.standard_normal(40)
    return HyperparameterSelector(A, f, A, f, np.eye(5)), c_true


class TestBilevelConfig:
    """Test cases for optimizer settings."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"eta0": 0.0},
            {"iota": 1.0},
            {"iota": -0.1},
            {"max_iters": 0},
            {"stop_window": 0},
            {"eps_gamma": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test out-of-range settings are rejected."""
        with pytest.raises(ConfigurationError):
            BilevelConfig(**kwargs)


class TestLambdaGrid:
    """Test cases for the default lambda grid."""

    def test_default(self):
        """Test 141 log-spaced points from 1e-12 to 1e2."""
        grid = default_lambda_grid()

        assert grid.size == 141
        assert grid[0] == pytest.approx(1e-12)
        assert grid[-1] == pytest.approx(1e2)
        np.testing.assert_allclose(np.diff(np.log10(grid)), 0.1)

    def test_invalid(self):
        """Test an empty or reversed grid is rejected."""
        with pytest.raises(ConfigurationError):
            default_lambda_grid(num=0)
        with pytest.raises(ConfigurationError):
            default_lambda_grid(2.0, -2.0)


class TestPenaltyRoot:
    """Test cases for the penalty square roots."""

    def test_rkhs(self, toy_system, rng):
        """Test |K c|^2 = c^T Gbar c."""
        K = penalty_root(PenaltyNorm.RKHS, toy_system)
        c = rng.standard_normal(toy_system.n_basis)

        assert np.sum((K @ c) ** 2) == pytest.approx(c @ toy_system.Gbar @ c, rel=1e-6)

    def test_l2rho(self, toy_system, rng):
        """Test |K c|^2 = sum_k rho_k dr (Gbar c)_k^2."""
        K = penalty_root(PenaltyNorm.L2RHO, toy_system)
        c = rng.standard_normal(toy_system.n_basis)
        phi = toy_system.Gbar @ c
        expected = np.sum(toy_system.rho_hat * toy_system.dr * phi**2)

        assert np.sum((K @ c) ** 2) == pytest.approx(expected, rel=1e-6)

    def test_euclidean(self, toy_system):
        """Test the plain l2 norm uses the identity."""
        K = penalty_root(PenaltyNorm.EUCLIDEAN, toy_system)

        np.testing.assert_array_equal(K, np.eye(toy_system.n_basis))


class TestLowerLevel:
    """Test cases for the lower-level Tikhonov fit."""

    def test_ridge_closed_form(self, rng):
        """Test an identity penalty root reduces to ridge regression."""
        selector, _ = _overdetermined(rng, noise=0.1)
        A, f = selector.A_train, selector.f_train

        c = selector.lower_solve(-1.0).c
        expected = np.linalg.solve(A.T @ A + 0.1 * np.eye(5), A.T @ f)

        np.testing.assert_allclose(c, expected, rtol=1e-8)

    def test_heavy_regularization(self, rng):
        """Test gamma = 12 shrinks the solution to nothing."""
        selector, _ = _overdetermined(rng, noise=0.1)

        heavy = np.linalg.norm(selector.lower_solve(12.0).c)
        light = np.linalg.norm(selector.lower_solve(-12.0).c)

        assert heavy <= 1e-6 * light

    def test_zero_training_data(self, rng):
        """Test f_L = 0 gives c = 0 and a zero hypergradient."""
        A = rng.standard_normal((20, 4))
        selector = HyperparameterSelector(A, np.zeros(20), A, rng.standard_normal(20), np.eye(4))

        c = selector.lower_solve(0.5).c

        np.testing.assert_array_equal(c, 0.0)
        assert selector.hypergradient(0.5, c) == 0.0
        assert selector.upper_loss(c) == pytest.approx(float(selector.f_valid @ selector.f_valid))


class TestHypergradient:
    """Test cases for implicit differentiation of the validation loss."""

    @pytest.mark.parametrize("gamma", [-2.0, -1.0, 0.0, 1.0])
    def test_matches_central_differences(self, rng, gamma):
        """Test the analytic gradient against a central difference in gamma."""
        G = rng.standard_normal((5, 5))
        K = G @ G.T + np.eye(5)
        selector = HyperparameterSelector(
            rng.standard_normal((50, 5)),
            rng.standard_normal(50),
            rng.standard_normal((50, 5)),
            rng.standard_normal(50),
            K,
        )

        analytic, numeric, loss = _gradient_pair(selector, gamma, h=1e-4)

        assert abs(analytic - numeric) <= 1e-4 * abs(numeric) + 1e-6 * (1.0 + loss)

    @pytest.mark.parametrize("seed", range(50))
    def test_random_systems(self, seed):
        """Test random well-posed systems at five gammas each."""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        m_train, m_valid = (int(m) for m in rng.integers(n + 1, 40, size=2))
        B = rng.standard_normal((n, n))
        selector = HyperparameterSelector(
            rng.standard_normal((m_train, n)),
            rng.standard_normal(m_train),
            rng.standard_normal((m_valid, n)),
            rng.standard_normal(m_valid),
            B @ B.T + 0.1 * np.eye(n),
        )

        for gamma in (-3.0, -1.5, 0.0, 1.5, 3.0):
            analytic, numeric, _ = _gradient_pair(selector, gamma, h=1e-5)
            assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(analytic)), gamma

    @pytest.mark.parametrize("norm", list(PenaltyNorm))
    def test_assembled_split(self, toy_split, norm):
        """Test every penalty norm on the split of assembled FPE data."""
        selector = selector_for(toy_split, norm)
        scale = 2.0 * math.log10(
            np.linalg.norm(selector.A_train, 2) / np.linalg.norm(selector.K, 2)
        )

        for gamma in (scale - 4.0, scale - 2.0, scale):
            analytic, numeric, loss = _gradient_pair(selector, gamma, h=1e-3)
            assert abs(analytic - numeric) <= 1e-3 * abs(numeric) + 1e-5 * loss, gamma

    def test_requires_factors(self):
        """Test the gradient is unavailable before the GSVD."""
        selector = _scalar_selector()

        assert not selector.prepared
        with pytest.raises(StateError):
            selector.hypergradient(0.0, np.zeros(1))

    def test_scalar_sign(self):
        """Test the loss decreases toward lambda = 4 from below."""
        selector = _scalar_selector()
        c = selector.lower_solve(0.0).c

        assert c[0] == pytest.approx(0.5)
        assert selector.hypergradient(0.0, c) < 0.0


class TestBilevel:
    """Test cases for the Nesterov bilevel optimizer."""

    def test_scalar_optimum(self):
        """Test gamma converges to log10(4) where c = 0.2."""
        selection = _scalar_selector().bilevel_optimize(
            BilevelConfig(eta0=0.1, iota=0.5, max_iters=2000)
        )

        assert selection.method is SelectionMethod.BILEVEL
        assert math.log10(selection.lam) == pytest.approx(math.log10(4.0), abs=0.02)
        assert selection.c[0] == pytest.approx(0.2, abs=0.01)

    def test_flat_loss_stops_after_window(self):
        """Test a constant validation loss stops exactly after the window."""
        selector = _scalar_selector(f_valid=0.0, a_valid=0.0)

        selection = selector.bilevel_optimize(BilevelConfig(stop_window=5))

        assert len(selection.trace) == 5
        assert selection.trace.stop_reason is StopReason.CONVERGED_WINDOW
        np.testing.assert_array_equal(selection.trace.gammas, 0.0)

    def test_plain_descent_is_monotone(self):
        """Test iota = 0 with a small step never increases a convex-in-gamma loss."""
        selection = _scalar_selector().bilevel_optimize(
            BilevelConfig(eta0=0.01, iota=0.0, max_iters=10)
        )
        losses = selection.trace.losses

        assert len(losses) == 10
        assert np.all(np.diff(losses) <= 1e-12)
        assert selection.trace.gammas[-1] < math.log10(4.0)

    def test_plain_descent_stops_after_window(self):
        """Test iota = 0 with loose loss and tiny steps stops after exactly W iterations."""
        cfg = BilevelConfig(eta0=1e-6, iota=0.0, eps_loss=1e6, stop_window=7)

        selection = _scalar_selector().bilevel_optimize(cfg)

        assert len(selection.trace) == 7
        assert selection.trace.stop_reason is StopReason.CONVERGED_WINDOW
        assert np.all(selection.trace.gammas > 0.0)

    def test_max_iters(self):
        """Test the iteration cap ends the run."""
        selector = _scalar_selector(f_valid=0.0, a_valid=0.0)

        selection = selector.bilevel_optimize(BilevelConfig(stop_window=5, max_iters=3))

        assert len(selection.trace) == 3
        assert selection.trace.stop_reason is StopReason.MAX_ITERS

    def test_trace_records(self):
        """Test records number iterations and the returned lambda is the last gamma."""
        selection = _scalar_selector().bilevel_optimize(BilevelConfig(max_iters=25))
        trace = selection.trace

        assert [rec.k for rec in trace.records] == list(range(1, len(trace) + 1))
        assert selection.lam == pytest.approx(10.0 ** trace.gammas[-1])
        assert np.all(np.isfinite(trace.losses))

    def test_deterministic(self, rng):
        """Test identical inputs give identical traces."""
        selector, _ = _overdetermined(rng, noise=0.1)
        args = (selector.A_train, selector.f_train, selector.A_valid, selector.f_valid, selector.K)
        cfg = BilevelConfig(eta0=0.05, iota=0.9, max_iters=50)

        first = HyperparameterSelector(*args).bilevel_optimize(cfg)
        second = HyperparameterSelector(*args).bilevel_optimize(cfg)

        np.testing.assert_array_equal(first.trace.gammas, second.trace.gammas)
        np.testing.assert_array_equal(first.trace.losses, second.trace.losses)

    def test_monitor(self):
        """Test the monitor value is stored on every record."""
        selection = _scalar_selector().bilevel_optimize(
            BilevelConfig(max_iters=10), monitor=lambda c: float(abs(c[0] - 0.2))
        )

        assert all(rec.error is not None for rec in selection.trace.records)

    def test_divergence(self):
        """Test a non-finite loss raises DivergenceError with the partial trace."""
        selector = _scalar_selector(f_valid=float("nan"))

        with pytest.raises(DivergenceError) as excinfo:
            selector.bilevel_optimize(BilevelConfig(max_iters=10))

        assert len(excinfo.value.trace) == 0


class TestLCurve:
    """Test cases for the L-curve corner."""

    def test_deblurring(self, rng):
        """Test the corner beats the least regularized solution."""
        A, f, c_true = _blur_problem(rng)
        selector = HyperparameterSelector(A, f, A, f, np.eye(32))
        grid = np.logspace(-8, 0, 81)

        selection = selector.lcurve_select(grid)
        smallest = selector.lower_solve(-8.0).c

        assert not selection.fallback
        assert selection.lam in grid
        assert np.linalg.norm(selection.c - c_true) < np.linalg.norm(smallest - c_true)

    def test_near_oracle(self, rng):
        """Test the corner lands within two grid steps of the error-minimizing lambda."""
        A, f, c_true = _picard_problem(rng, noise=0.1)
        selector = HyperparameterSelector(A, f, A, f, np.eye(32))
        grid = np.logspace(-6, 2, 9)

        selection = selector.lcurve_select(grid)
        best = int(np.flatnonzero(grid == selection.lam)[0])

        assert not selection.fallback
        assert abs(best - _oracle_index(selector, grid, c_true)) <= 2

    def test_interior_curvature_peak(self, rng):
        """Test the returned lambda is the interior curvature maximum of the direct solves."""
        A, f, _ = _picard_problem(rng, noise=0.1)
        selector = HyperparameterSelector(A, f, A, f, np.eye(32))
        grid = np.logspace(-6, 2, 33)

        x, y = [], []
        for lam in grid:
            stacked = np.vstack([A, math.sqrt(lam) * np.eye(32)])
            c = np.linalg.lstsq(stacked, np.concatenate([f, np.zeros(32)]), rcond=None)[0]
            x.append(math.log(np.linalg.norm(A @ c - f)))
            y.append(math.log(np.linalg.norm(c)))
        t = np.log10(grid)
        dx, dy = np.gradient(np.array(x), t), np.gradient(np.array(y), t)
        ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
        curvature = (dx * ddy - dy * ddx) / (dx**2 + dy**2) ** 1.5
        peak = int(np.argmax(curvature))

        selection = selector.lcurve_select(grid)

        assert 0 < peak < grid.size - 1
        assert selection.lam == grid[peak]

    def test_single_point(self, rng):
        """Test a one-point grid returns that point."""
        selector, _ = _overdetermined(rng, noise=0.1)

        selection = selector.lcurve_select([1e-3])

        assert selection.lam == 1e-3
        assert not selection.fallback

    def test_two_points_fall_back(self, rng):
        """Test too short a curve falls back to GCV."""
        selector, _ = _overdetermined(rng, noise=0.1)
        grid = [1e-3, 1e-2]

        selection = selector.lcurve_select(grid)
        gcv = selector.gcv_select(grid)

        assert selection.fallback
        assert selection.method is SelectionMethod.LCURVE
        assert selection.lam == gcv.lam
        np.testing.assert_array_equal(selection.scores, gcv.scores)

    def test_zero_data_falls_back(self, rng, caplog):
        """Test f = 0 degenerates the curve and GCV ties resolve to the largest lambda."""
        A = rng.standard_normal((40, 5))
        selector = HyperparameterSelector(A, np.zeros(40), A, np.zeros(40), np.eye(5))
        grid = np.logspace(-4, 0, 5)

        with caplog.at_level(logging.WARNING, logger="levyrkhs.hyperselect"):
            selection = selector.lcurve_select(grid)

        assert selection.fallback
        assert "degenerate" in caplog.text
        assert selection.lam == selector.gcv_select(grid).lam == grid[-1]
        np.testing.assert_array_equal(selection.c, 0.0)


class TestGcv:
    """Test cases for generalized cross-validation."""

    def test_deblurring(self, rng):
        """Test the GCV minimum beats the least regularized solution."""
        A, f, c_true = _blur_problem(rng)
        selector = HyperparameterSelector(A, f, A, f, np.eye(32))

        selection = selector.gcv_select(np.logspace(-8, 0, 81))
        smallest = selector.lower_solve(-8.0).c

        assert selection.method is SelectionMethod.GCV
        assert np.linalg.norm(selection.c - c_true) < np.linalg.norm(smallest - c_true)

    def test_near_oracle(self, rng):
        """Test the GCV minimum lies within two grid steps of the error-minimizing lambda."""
        A, f, c_true = _picard_problem(rng, noise=0.1)
        selector = HyperparameterSelector(A, f, A, f, np.eye(32))
        grid = np.logspace(-6, 2, 9)

        selection = selector.gcv_select(grid)
        best = int(np.flatnonzero(grid == selection.lam)[0])

        assert abs(best - _oracle_index(selector, grid, c_true)) <= 2

    def test_single_point(self, rng):
        """Test a one-point grid returns that point."""
        selector, _ = _overdetermined(rng, noise=0.1)

        selection = selector.gcv_select([1e-3])

        assert selection.lam == 1e-3
        assert selection.scores.shape == (1,)
        assert np.isfinite(selection.scores[0])

    def test_noiseless_prefers_smallest(self, rng):
        """Test consistent data selects the smallest lambda."""
        selector, _ = _overdetermined(rng)
        grid = np.logspace(-6, 0, 7)

        selection = selector.gcv_select(grid)

        assert selection.lam == pytest.approx(1e-6)
        assert np.all(np.diff(selection.scores) > 0)

    def test_invalid_grid(self, rng):
        """Test nonpositive lambdas are rejected."""
        selector, _ = _overdetermined(rng)

        with pytest.raises(ConfigurationError):
            selector.gcv_select([0.0, 1.0])


class TestSplitWrappers:
    """Test cases for the split-level entry points."""

    def test_selector_is_cached(self, toy_split):
        """Test one GSVD serves every call on the same split and norm."""
        first = selector_for(toy_split, PenaltyNorm.RKHS)

        assert selector_for(toy_split, PenaltyNorm.RKHS) is first
        assert selector_for(toy_split, PenaltyNorm.L2RHO) is not first

    def test_selector_lives_on_split(self, toy_system):
        """Test selectors are stored on their split, not in a process-wide cache."""
        split = split_train_valid(toy_system)
        selector = selector_for(split, PenaltyNorm.EUCLIDEAN)

        assert split.selectors == {PenaltyNorm.EUCLIDEAN: selector}
        assert split_train_valid(toy_system).selectors == {}
        assert selector_for(split_train_valid(toy_system), PenaltyNorm.EUCLIDEAN) is not selector

    def test_lower_and_upper(self, toy_split):
        """Test the wrappers agree with the selector."""
        sol = lower_solve(toy_split, PenaltyNorm.RKHS, -3.0)
        selector = selector_for(toy_split, PenaltyNorm.RKHS)

        assert sol.lam == pytest.approx(1e-3)
        assert upper_loss(toy_split, sol.c) == pytest.approx(selector.upper_loss(sol.c))
        assert math.isfinite(hypergradient(toy_split, PenaltyNorm.RKHS, -3.0, sol.c))

    def test_bilevel_on_toy_split(self, toy_split):
        """Test a short bilevel run on assembled data."""
        cfg = BilevelConfig(eta0=0.05, iota=0.9, max_iters=40, stop_window=10)

        selection = bilevel_optimize(toy_split, PenaltyNorm.RKHS, cfg)

        assert 1 <= len(selection.trace) <= 40
        assert selection.trace.stop_reason is not None
        assert np.all(np.isfinite(selection.c))
        assert selection.c.shape == (toy_split.train.n_basis,)

    @pytest.mark.parametrize("select", [lcurve_select, gcv_select])
    def test_grid_selectors_on_toy_split(self, toy_split, select):
        """Test the grid selectors return a grid point."""
        grid = default_lambda_grid(-8.0, 0.0, 33)

        selection = select(toy_split, PenaltyNorm.RKHS, grid)

        assert np.any(np.isclose(grid, selection.lam))
        assert np.all(np.isfinite(selection.c))
