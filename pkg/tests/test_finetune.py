import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adakde import SamplePointKde
from adakde.errors import ConfigError
from adakde.finetune import FinetuneConfig, calibrate, finetune_kde, golden_section, loo_objective
from adakde.linalg import BandwidthFactor

from conftest import random_spd_factor, rel_err

TWO_X = np.array([[-1.0], [1.0]])
TWO_L = np.ones((2, 1, 1))


def two_point_closed_form(g):
    return 0.5 * math.log(2 * math.pi) + 0.5 * math.log(g) + 2 / g


class TestObjective:
    @pytest.mark.parametrize("g", [0.05, 0.5, 1.0, 4.0, 50.0])
    def test_closed_form(self, g):
        assert loo_objective(TWO_X, TWO_L, g) == pytest.approx(two_point_closed_form(g), rel=1e-13)

    def test_accepts_factor_list(self):
        assert loo_objective(TWO_X, [BandwidthFactor.identity(1)] * 2, 2.0) == pytest.approx(two_point_closed_form(2.0))

    def test_naive_n5(self, rng):
        X = rng.normal(size=(5, 2))
        L = np.stack([random_spd_factor(rng, 2) for _ in range(5)])
        g = 0.7
        kde = SamplePointKde(X, L * math.sqrt(g))
        naive = -np.mean([kde.loo_log_density(i) for i in range(5)])
        assert rel_err(loo_objective(X, L, g), naive) < 1e-12

    def test_rejects_non_positive_gamma(self):
        with pytest.raises(ValueError):
            loo_objective(TWO_X, TWO_L, 0.0)

    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(8, 2))
        L = rng.uniform(0.2, 1, size=(8, 1, 1)) * np.eye(2)
        p = rng.permutation(8)
        assert loo_objective(X[p], L[p], 1.7) == pytest.approx(loo_objective(X, L, 1.7), rel=1e-12)


class TestCalibrate:
    def test_two_point_gamma_is_four(self):
        res = calibrate(TWO_X, TWO_L)
        assert abs(res.gamma_star - 4.0) < 1e-3
        assert res.objective_at_gamma_star == pytest.approx(two_point_closed_form(res.gamma_star), rel=1e-12)
        assert res.objective_at_one == pytest.approx(two_point_closed_form(1.0), rel=1e-12)
        # objective grows towards both ends of the bracket
        lo, hi = FinetuneConfig().bracket
        assert two_point_closed_form(lo) > res.objective_at_gamma_star < two_point_closed_form(hi)

    def test_dense_grid_oracle(self):
        cfg = FinetuneConfig()
        t = np.linspace(math.log(cfg.bracket[0]), math.log(cfg.bracket[1]), 2001)
        spacing = t[1] - t[0]
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, d = int(rng.integers(20, 60)), int(rng.integers(1, 4))
            X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3)
            L = np.stack([random_spd_factor(rng, d, 0.05, 3.0) for _ in range(n)])
            res = calibrate(X, L, cfg)
            from adakde.loo import LooObjective

            dense = LooObjective(X, L).values(np.exp(t))
            t_best = t[int(np.argmin(dense))]
            assert abs(math.log(res.gamma_star) - t_best) <= spacing or res.gamma_star == 1.0
            assert res.objective_at_gamma_star <= dense.min() + 1e-9

    def test_never_worse_than_one(self, rng):
        for _ in range(10):
            X = rng.normal(size=(30, 2))
            L = rng.uniform(0.05, 2, size=(30, 1, 1)) * np.eye(2)
            res = calibrate(X, L)
            assert res.objective_at_gamma_star <= res.objective_at_one
            assert res.gamma_star > 0

    def test_near_duplicates_stay_in_bracket(self):
        X = np.array([[0.0], [1e-9], [2e-9], [1.0]])
        cfg = FinetuneConfig()
        res = calibrate(X, np.ones((4, 1, 1)), cfg)
        assert cfg.bracket[0] <= res.gamma_star <= cfg.bracket[1]
        assert np.isfinite(res.objective_at_gamma_star)

    @given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
    def test_scale_equivariance(self, c, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(25, 2))
        L = rng.uniform(0.1, 1, size=(25, 1, 1)) * np.eye(2)
        a, b = calibrate(X, L), calibrate(c * X, c * L)
        assert math.log(b.gamma_star) == pytest.approx(math.log(a.gamma_star), abs=2e-4)

    def test_trace_records_evaluations(self):
        res = calibrate(TWO_X, TWO_L)
        assert len(res.trace) > FinetuneConfig().grid_points
        for g, v in res.trace:
            assert v == pytest.approx(two_point_closed_form(g), rel=1e-12)

    def test_finetune_kde_scales_factors(self):
        kde, res = finetune_kde(SamplePointKde(TWO_X, TWO_L))
        np.testing.assert_allclose(kde.factor_array, math.sqrt(res.gamma_star))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FinetuneConfig(bracket=(2.0, 10.0))
        with pytest.raises(ConfigError):
            FinetuneConfig(grid_points=2)
        with pytest.raises(ConfigError):
            FinetuneConfig(tol=0)


def test_golden_section_quadratic():
    evals = list(golden_section(lambda x: (x - 0.3) ** 2, -1.0, 2.0, 1e-8))
    x_best = min(evals, key=lambda e: e[1])[0]
    assert abs(x_best - 0.3) < 1e-7
