"""Optimizer checks against closed-form solutions."""

import numpy as np
import pytest

from eventabs.owlqn import OptimizationError, OwlqnConfig, minimize


def soft_threshold(b: np.ndarray, c: float) -> np.ndarray:
    return np.sign(b) * np.maximum(np.abs(b) - c, 0.0)


def shifted_quadratic(b: np.ndarray):
    def objective(x: np.ndarray):
        d = x - b
        return 0.5 * float(d @ d), d
    return objective


def spd_quadratic(a: np.ndarray, b: np.ndarray):
    def objective(x: np.ndarray):
        return 0.5 * float(x @ a @ x) - float(b @ x), a @ x - b
    return objective


def random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.normal(0, 1, (dim, dim))
    return m @ m.T + dim * np.eye(dim)


class TestSoftThreshold:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(5, 40))
        b = rng.normal(0, 2, dim)
        c = float(rng.uniform(0.05, 1.5))
        x, result = minimize(
            shifted_quadratic(b), dim, OwlqnConfig(l1_coefficient=c)
        )
        assert np.abs(x - soft_threshold(b, c)).max() < 1e-6
        assert result.converged

    def test_dominating_penalty_returns_exact_zero(self):
        b = np.array([0.5, -1.0, 2.0])
        x, result = minimize(
            shifted_quadratic(b), 3, OwlqnConfig(l1_coefficient=100.0)
        )
        assert np.array_equal(x, np.zeros(3))
        assert result.nonzero == 0

    def test_zero_count_monotone_in_penalty(self):
        rng = np.random.default_rng(11)
        b = rng.normal(0, 1, 40)
        previous_zeros = -1
        for c in [0.01, 0.1, 0.3, 0.6, 1.0, 2.0]:
            x, _ = minimize(shifted_quadratic(b), 40, OwlqnConfig(l1_coefficient=c))
            zeros = int(np.sum(x == 0.0))
            assert zeros >= previous_zeros
            assert zeros == int(np.sum(np.abs(b) <= c))
            previous_zeros = zeros


class TestUnpenalized:
    @pytest.mark.parametrize("seed", range(5))
    def test_spd_quadratic_matches_direct_solve(self, seed):
        rng = np.random.default_rng(100 + seed)
        dim = int(rng.integers(2, 6))
        a = random_spd(rng, dim)
        b = rng.normal(0, 1, dim)
        x, result = minimize(spd_quadratic(a, b), dim, OwlqnConfig())
        assert np.abs(x - np.linalg.solve(a, b)).max() < 1e-6

    def test_reduces_objective_from_initial(self):
        rng = np.random.default_rng(5)
        a = random_spd(rng, 8)
        b = rng.normal(0, 1, 8)
        x0 = rng.normal(0, 3, 8)
        objective = spd_quadratic(a, b)
        x, result = minimize(objective, 8, OwlqnConfig(), initial=x0)
        assert result.objective <= objective(x0)[0]


class TestContracts:
    def test_composite_objective_never_exceeds_initial(self):
        rng = np.random.default_rng(21)
        b = rng.normal(0, 2, 25)
        c = 0.4
        objective = shifted_quadratic(b)
        x0 = rng.normal(0, 2, 25)
        x, result = minimize(
            objective, 25, OwlqnConfig(l1_coefficient=c), initial=x0
        )
        initial_composite = objective(x0)[0] + c * np.abs(x0).sum()
        assert result.objective <= initial_composite + 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(31)
        b = rng.normal(0, 1, 30)
        cfg = OwlqnConfig(l1_coefficient=0.2)
        x1, _ = minimize(shifted_quadratic(b), 30, cfg)
        x2, _ = minimize(shifted_quadratic(b), 30, cfg)
        assert np.array_equal(x1, x2)

    def test_non_finite_objective_raises(self):
        def bad(x):
            return float("nan"), np.zeros(3)

        with pytest.raises(OptimizationError, match="non-finite"):
            minimize(bad, 3, OwlqnConfig())

    def test_non_finite_gradient_raises(self):
        def bad(x):
            g = np.zeros(3)
            g[0] = np.inf
            return 0.0, g

        with pytest.raises(OptimizationError):
            minimize(bad, 3, OwlqnConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OwlqnConfig(memory=0)
        with pytest.raises(ValueError):
            OwlqnConfig(l1_coefficient=-1.0)
        with pytest.raises(ValueError):
            OwlqnConfig(tolerance=0.0)

    def test_iteration_cap_respected(self):
        rng = np.random.default_rng(9)
        a = random_spd(rng, 30)
        b = rng.normal(0, 1, 30)
        _, result = minimize(
            spd_quadratic(a, b), 30, OwlqnConfig(max_iterations=3)
        )
        assert result.iterations <= 3
