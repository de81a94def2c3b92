import math

import numpy as np
import pytest

from diffepi.calibration import (
    CalibrationConfig,
    apply_scaling,
    calibrate,
    constant_mean_baseline,
    forecast,
    metrics,
    zscore_scale,
)
from diffepi.diffcore import DTensor
from diffepi.engine import ModelParams, run
from diffepi.errors import ConfigurationError, DomainError

from helpers import check_grads


class TestZScoreScale:
    def test_identity_when_series_match(self):
        target = np.array([3.0, 7.0, 1.0, 9.0])
        scaled, stats = zscore_scale(target.copy(), target)
        assert np.allclose(scaled.values, target, atol=1e-12)
        assert not stats.degenerate

    def test_hand_computed_example(self):
        scaled, _ = zscore_scale(np.array([0.0, 1.0, 2.0]), np.array([10.0, 30.0, 50.0]))
        assert np.allclose(scaled.values, [10.0, 30.0, 50.0], atol=1e-9)

    def test_moment_matching_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = rng.integers(5, 60)
            sim = rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 10), n)
            target = rng.normal(rng.uniform(0, 100), rng.uniform(0.5, 30), n)
            scaled, _ = zscore_scale(sim, target)
            t_sd = np.sqrt(np.mean((target - target.mean()) ** 2))
            s_sd = np.sqrt(np.mean((scaled.values - scaled.values.mean()) ** 2))
            assert abs(s_sd - t_sd) < 1e-9
            assert abs(scaled.values.min() - target.min()) < 1e-9

    def test_scale_equivariance(self):
        rng = np.random.default_rng(8)
        sim = rng.normal(2.0, 1.5, 40)
        target = rng.normal(50.0, 9.0, 40)
        a, _ = zscore_scale(sim, target)
        b, _ = zscore_scale(3.7 * sim, target)
        assert np.allclose(a.values, b.values, atol=1e-9)

    def test_degenerate_sim_flagged(self):
        scaled, stats = zscore_scale(np.full(5, 2.0), np.array([1.0, 2, 3, 4, 5]))
        assert stats.degenerate
        assert np.allclose(scaled.values, 3.0)

    def test_rejects_short_series(self):
        with pytest.raises(ConfigurationError):
            zscore_scale(np.array([1.0]), np.array([1.0]))

    def test_differentiable(self):
        target = np.array([5.0, 1.0, 8.0, 3.0, 6.0])

        def build(t):
            scaled, _ = zscore_scale(t, target)
            diff = scaled - target
            return (diff * diff).mean()

        check_grads(build, np.array([0.3, 1.2, 0.8, 2.0, 1.1]))

    def test_apply_scaling_consistent_on_train_window(self):
        rng = np.random.default_rng(9)
        sim = rng.normal(4, 2, 30)
        target = rng.normal(100, 20, 30)
        scaled, stats = zscore_scale(sim, target)
        again = apply_scaling(sim, stats)
        assert np.allclose(scaled.values, again, atol=1e-9)


class TestMetrics:
    def test_perfect_forecast(self):
        y = np.array([1.0, 2.0, 3.0])
        m = metrics(y, y)
        assert m["nd"] == 0.0 and m["rmse"] == 0.0 and m["mae"] == 0.0

    def test_hand_arithmetic(self):
        m = metrics(np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.0, 2.0]))
        assert m["nd"] == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert m["mae"] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert m["rmse"] == pytest.approx(math.sqrt(8.0) / 3.0, abs=1e-12)

    def test_zero_target_rejected(self):
        with pytest.raises(DomainError):
            metrics(np.zeros(3), np.ones(3))

    def test_conventional_rmse_labelled(self):
        m = metrics(np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.0, 2.0]))
        assert m["rmse_conventional"] == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)


class TestCalibrationConfig:
    def test_schedule_anneals_geometrically(self):
        cfg = CalibrationConfig(epochs=3, lr_initial=0.1, lr_final=0.001)
        rates = [cfg.learning_rate(e) for e in range(3)]
        assert rates[0] == pytest.approx(0.1)
        assert rates[1] == pytest.approx(0.01)
        assert rates[2] == pytest.approx(0.001)

    def test_rejects_increasing_schedule(self):
        with pytest.raises(ConfigurationError):
            CalibrationConfig(lr_initial=0.001, lr_final=0.1)


def tiny_model():
    return ModelParams(
        population=30, horizon=12, clusters=1,
        encounter_prob=0.7, transmission_prob=0.5,
        initial_counts=(25, 5, 0, 0), mutation_prob=0.0,
    )


class TestCalibrate:
    def test_zero_epochs_noop(self):
        mp = tiny_model()
        data = np.linspace(1, 10, 12)
        res = calibrate(mp, data, CalibrationConfig(epochs=0, param_names=["transmission_prob"]))
        assert res.params.transmission_prob == mp.transmission_prob
        assert res.loss_trace == []

    def test_loss_trace_finite_and_improves(self):
        mp = tiny_model()
        truth = run(mp, seed=77, horizon=12).new_infections + 0.0
        start = mp.with_values(transmission_prob=0.25)
        cfg = CalibrationConfig(
            epochs=8, param_names=["transmission_prob"], sim_seed=55
        )
        res = calibrate(start, truth, cfg)
        assert all(math.isfinite(v) for v in res.loss_trace)
        assert res.best_loss <= res.loss_trace[0] + 1e-12

    def test_best_so_far_non_increasing(self):
        mp = tiny_model().with_values(transmission_prob=0.3)
        data = np.abs(np.sin(np.arange(12))) * 5 + 1
        cfg = CalibrationConfig(epochs=6, param_names=["transmission_prob", "encounter_prob"], sim_seed=3)
        res = calibrate(mp, data, cfg)
        best = np.minimum.accumulate(res.loss_trace)
        assert np.all(np.diff(best) <= 1e-12)

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ConfigurationError):
            calibrate(tiny_model(), np.ones(12), CalibrationConfig(param_names=["bogus"]))


class TestForecast:
    def test_zero_horizon_empty(self):
        mp = tiny_model()
        train = np.linspace(1, 5, 12)
        res = forecast(mp, train, horizon=0, seed=5)
        assert len(res.forecast_scaled) == 0
        assert len(res.train_scaled) == 12

    def test_reproducible_under_seed(self):
        mp = tiny_model()
        train = np.linspace(1, 5, 12)
        a = forecast(mp, train, horizon=6, seed=9)
        b = forecast(mp, train, horizon=6, seed=9)
        assert np.array_equal(a.forecast_scaled, b.forecast_scaled)

    def test_train_window_statistics_reused(self):
        mp = tiny_model()
        train = np.linspace(2, 9, 12)
        res = forecast(mp, train, horizon=5, seed=11)
        # training part scaled to match target moments exactly
        sd = lambda x: np.sqrt(np.mean((x - x.mean()) ** 2))
        if not res.scaling.degenerate:
            assert sd(res.train_scaled) == pytest.approx(sd(train), abs=1e-9)
            assert res.train_scaled.min() == pytest.approx(train.min(), abs=1e-9)

    def test_baseline_shape(self):
        base = constant_mean_baseline(np.array([2.0, 4.0]), 5)
        assert np.allclose(base, 3.0) and len(base) == 5
