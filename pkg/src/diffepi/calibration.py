"""Output scaling, forecasting metrics, and gradient-descent calibration.

Simulated series are matched to empirical data by z-score rescaling (mean
and standard deviation of the target) followed by a translation aligning
the minima, which decouples the model population size from the real one.
Calibration runs plain gradient descent in an unconstrained reparametrised
space with the learning rate annealed geometrically from 0.1 to 0.001.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffcore import (
    DTensor,
    as_dtensor,
    sigmoid,
    softplus,
    sqrt0,
    tmin,
    zero_grads,
)
from .engine import LEARNABLE_SPECS, ModelParams, run
from .errors import CalibrationError, ConfigurationError, DomainError

_DEGENERATE_SD = 1e-12


@dataclass
class ScalingStats:
    """Moments used by the z-score transform, frozen on the training window."""

    sim_mean: float
    sim_sd: float
    target_mean: float
    target_sd: float
    target_min: float
    transformed_min: float
    degenerate: bool = False


def _population_sd(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def zscore_scale(sim, target) -> tuple[DTensor, ScalingStats]:
    """Rescale the simulated series to the target's mean/sd, then translate
    so the minima align. Differentiable with respect to the simulation.

    A simulated series with no spread cannot be z-scored; it maps to a
    constant series at the target mean and the stats are flagged.
    """
    target = np.asarray(target, dtype=np.float64)
    sim_t = as_dtensor(sim)
    if sim_t.values.ndim != 1 or target.ndim != 1:
        raise ConfigurationError("zscore_scale expects 1-D series")
    if len(sim_t) < 2 or len(target) < 2:
        raise ConfigurationError("series must have at least 2 points")

    t_mean = float(target.mean())
    t_sd = _population_sd(target)
    t_min = float(target.min())

    sim_vals = sim_t.values
    s_mean = float(sim_vals.mean())
    s_sd = _population_sd(sim_vals)
    if s_sd <= _DEGENERATE_SD:
        stats = ScalingStats(s_mean, s_sd, t_mean, t_sd, t_min, 0.0, degenerate=True)
        return as_dtensor(np.full(len(sim_vals), t_mean)), stats

    mean = sim_t.mean()
    sd = sqrt0(((sim_t - mean) * (sim_t - mean)).mean())
    transformed = (sim_t - mean) / sd * t_sd + t_mean
    t_min_sim = tmin(transformed)
    scaled = transformed - t_min_sim + t_min
    stats = ScalingStats(
        s_mean, s_sd, t_mean, t_sd, t_min, float(t_min_sim.values), degenerate=False
    )
    return scaled, stats


def apply_scaling(sim, stats: ScalingStats) -> np.ndarray:
    """Apply frozen training-window scaling to a (possibly longer) series."""
    sim = np.asarray(sim, dtype=np.float64)
    if stats.degenerate:
        return np.full(len(sim), stats.target_mean)
    transformed = (sim - stats.sim_mean) / stats.sim_sd * stats.target_sd + stats.target_mean
    return transformed - stats.transformed_min + stats.target_min


def metrics(y, yhat) -> dict:
    """Forecasting errors: ND, the nonstandard |y^2 - yhat^2| RMSE, and MAE.

    A conventional RMSE is included under its own key for external
    comparison; the primary "rmse" follows the published definition.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ConfigurationError("series length mismatch")
    T = len(y)
    abs_sum = np.abs(y).sum()
    if abs_sum == 0:
        raise DomainError("ND undefined: target series is identically zero")
    abs_err = np.abs(y - yhat)
    return {
        "nd": float(abs_err.sum() / abs_sum),
        "rmse": float(np.sqrt(np.abs(y**2 - yhat**2).sum()) / T),
        "mae": float(abs_err.sum() / T),
        "rmse_conventional": float(np.sqrt(np.mean((y - yhat) ** 2))),
    }


@dataclass
class CalibrationConfig:
    epochs: int = 300
    lr_initial: float = 0.1
    lr_final: float = 0.001
    observable: str = "new_infections"
    param_names: Optional[Sequence[str]] = None  # default: all learnables
    sim_seed: int = 1234  # frozen noise across epochs (common random numbers)

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.lr_final > self.lr_initial:
            raise ConfigurationError("learning rate schedule must be non-increasing")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")

    def learning_rate(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.lr_initial
        frac = epoch / (self.epochs - 1)
        return self.lr_initial * (self.lr_final / self.lr_initial) ** frac


@dataclass
class CalibrationResult:
    params: ModelParams
    loss_trace: list
    best_loss: float
    best_epoch: int
    scaling: Optional[ScalingStats] = None


_DOMAINS = dict(LEARNABLE_SPECS)


def _to_unconstrained(name: str, value: float) -> float:
    if _DOMAINS[name] == "unit":
        v = min(max(value, 1e-9), 1.0 - 1e-9)
        return math.log(v / (1.0 - v))
    v = max(value, 1e-12)
    # inverse softplus
    return v + math.log(-math.expm1(-v)) if v < 30 else v


def _squash(name: str, u: DTensor) -> DTensor:
    return sigmoid(u) if _DOMAINS[name] == "unit" else softplus(u)


def calibrate(
    mp: ModelParams, data, cfg: CalibrationConfig, seed: Optional[int] = None
) -> CalibrationResult:
    """Fit learnable parameters to a target series by gradient descent.

    The loss is the mean squared error between the z-scored simulated
    observable and the target over the training window, with frozen
    simulation noise so the objective is deterministic. Returns the
    best-loss parameters seen.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 1 or len(data) < 2:
        raise ConfigurationError("training data must be a 1-D series of length >= 2")
    names = list(cfg.param_names) if cfg.param_names else [n for n, _ in LEARNABLE_SPECS]
    for n in names:
        if n not in _DOMAINS:
            raise ConfigurationError(f"unknown learnable parameter {n!r}")
    sim_seed = cfg.sim_seed if seed is None else seed
    horizon = len(data)

    u = {n: _to_unconstrained(n, getattr(mp, n)) for n in names}
    best_u = dict(u)
    best_loss = math.inf
    best_epoch = -1
    trace = []
    last_stats = None
    # scale-free objective: MSE in units of the target variance, so the
    # annealed 0.1 -> 0.001 schedule is well conditioned at any magnitude
    target_var = max(_population_sd(data) ** 2, 1e-12)

    for epoch in range(cfg.epochs):
        leaves = {n: DTensor(u[n], requires_grad=True) for n in names}
        overrides = {n: _squash(n, leaf) for n, leaf in leaves.items()}
        out = run(mp, seed=sim_seed, horizon=horizon, param_overrides=overrides,
                  collect_tensors=True)
        series = out.tensor_series(cfg.observable)
        scaled, stats = zscore_scale(series, data)
        last_stats = stats
        diff = scaled - data
        loss = (diff * diff).mean() * (1.0 / target_var)
        loss_val = float(loss.values)
        trace.append(loss_val)
        if not math.isfinite(loss_val):
            report = {
                "epoch": epoch,
                "params": {n: float(_squash(n, DTensor(u[n])).values) for n in names},
                "saturated": [n for n in names if abs(u[n]) > 30.0],
            }
            raise CalibrationError(
                f"non-finite loss at epoch {epoch}; see report", report
            )
        if loss_val < best_loss:
            best_loss = loss_val
            best_epoch = epoch
            best_u = dict(u)
        loss.backward()
        lr = cfg.learning_rate(epoch)
        for n, leaf in leaves.items():
            g = float(leaf.grad) if leaf.grad is not None else 0.0
            u[n] = u[n] - lr * g
        zero_grads(leaves.values())

    if best_epoch < 0:
        best_u = u
    fitted = {n: float(_squash(n, DTensor(best_u[n])).values) for n in names}
    return CalibrationResult(
        params=mp.with_values(**fitted),
        loss_trace=trace,
        best_loss=best_loss if math.isfinite(best_loss) else math.nan,
        best_epoch=best_epoch,
        scaling=last_stats,
    )


@dataclass
class ForecastResult:
    train_scaled: np.ndarray
    forecast_scaled: np.ndarray
    scaling: ScalingStats
    observable: str


def forecast(
    mp: ModelParams,
    train_target,
    horizon: int,
    seed: int,
    observable: str = "new_infections",
) -> ForecastResult:
    """Extend the fitted simulation past the training window.

    The full run is scaled with statistics frozen on the training window
    (target moments beyond it are unknown at forecast time).
    """
    train_target = np.asarray(train_target, dtype=np.float64)
    if horizon < 0:
        raise ConfigurationError("forecast horizon must be nonnegative")
    train_len = len(train_target)
    out = run(mp, seed=seed, horizon=train_len + horizon)
    sim = out.series(observable)
    _, stats = zscore_scale(sim[:train_len], train_target)
    scaled = apply_scaling(sim, stats)
    return ForecastResult(
        train_scaled=scaled[:train_len],
        forecast_scaled=scaled[train_len:],
        scaling=stats,
        observable=observable,
    )


def constant_mean_baseline(train_target, horizon: int) -> np.ndarray:
    """Flat forecast at the training mean; the sanity floor any model must beat."""
    return np.full(horizon, float(np.asarray(train_target).mean()))
