"""Variance-based and one-at-a-time sensitivity analysis.

Saltelli sampling builds the A/B/A_B/B_A block matrix of size N(2d+2) from
a scrambled Sobol sequence; total-effect indices use the Jansen estimator
(averaged over both radial block families) with bootstrap confidence
intervals. Model evaluations are replicate-averaged with common random
numbers so simulator noise does not masquerade as parameter variance.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .engine import LEARNABLE_NAMES, ModelParams, run
from .errors import ConfigurationError

DEFAULT_REPLICATES = 8


@dataclass
class ParamSpace:
    """Named parameters with finite sampling bounds."""

    names: list
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if not (len(self.names) == len(self.lower) == len(self.upper)):
            raise ConfigurationError("names and bounds must have equal length")
        if not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise ConfigurationError("bounds must be finite")
        if not np.all(self.lower < self.upper):
            raise ConfigurationError("lower bounds must be strictly below upper bounds")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def from_dict(cls, bounds: dict) -> "ParamSpace":
        names = list(bounds)
        lo = [bounds[n][0] for n in names]
        hi = [bounds[n][1] for n in names]
        return cls(names, np.array(lo), np.array(hi))

    def to_dict(self) -> dict:
        return {n: (float(lo), float(hi)) for n, lo, hi in zip(self.names, self.lower, self.upper)}


def saltelli_sample(space: ParamSpace, N: int, seed: int = 0) -> np.ndarray:
    """Block sample of N(2d+2) rows: [A; B; A_B^(1..d); B_A^(1..d)].

    A and B come from a scrambled Sobol sequence in 2d dimensions; A_B^(i)
    is A with column i replaced from B (and symmetrically for B_A^(i)).
    N should be a power of two for the underlying sequence.
    """
    if N < 2:
        raise ConfigurationError("Saltelli base sample N must be at least 2")
    if N & (N - 1) != 0:
        warnings.warn(f"Saltelli base sample N={N} is not a power of 2; proceeding")
    d = space.dim
    sampler = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
    base = sampler.random(N)
    A = base[:, :d].copy()
    B = base[:, d:].copy()
    blocks = [A, B]
    for i in range(d):
        AB = A.copy()
        AB[:, i] = B[:, i]
        blocks.append(AB)
    for i in range(d):
        BA = B.copy()
        BA[:, i] = A[:, i]
        blocks.append(BA)
    unit = np.vstack(blocks)
    return space.lower + unit * (space.upper - space.lower)


def split_blocks(values: np.ndarray, d: int, N: int):
    """Undo the saltelli_sample row layout for a vector of evaluations."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) != N * (2 * d + 2):
        raise ConfigurationError(
            f"expected {N * (2 * d + 2)} evaluations for d={d}, N={N}; got {len(values)}"
        )
    fA = values[:N]
    fB = values[N : 2 * N]
    fAB = [values[(2 + i) * N : (3 + i) * N] for i in range(d)]
    fBA = [values[(2 + d + i) * N : (3 + d + i) * N] for i in range(d)]
    return fA, fB, fAB, fBA


@dataclass
class SobolResult:
    names: list
    total: np.ndarray
    total_ci_low: np.ndarray
    total_ci_high: np.ndarray
    first: np.ndarray
    variance: float
    samples: int
    degenerate: bool = False

    def as_rows(self):
        for i, n in enumerate(self.names):
            yield {
                "name": n,
                "total": float(self.total[i]),
                "total_ci_low": float(self.total_ci_low[i]),
                "total_ci_high": float(self.total_ci_high[i]),
                "first": float(self.first[i]),
            }


def _indices(fA, fB, fAB, fBA):
    d = len(fAB)
    sample = np.concatenate([fA, fB])
    V = sample.var()
    if V <= 1e-30:
        return None, None, V
    total = np.empty(d)
    first = np.empty(d)
    for i in range(d):
        jansen_a = 0.5 * np.mean((fA - fAB[i]) ** 2)
        jansen_b = 0.5 * np.mean((fB - fBA[i]) ** 2)
        total[i] = 0.5 * (jansen_a + jansen_b) / V
        s_a = np.mean(fB * (fAB[i] - fA))
        s_b = np.mean(fA * (fBA[i] - fB))
        first[i] = 0.5 * (s_a + s_b) / V
    return total, first, V


def sobol_total(
    evaluations,
    space: ParamSpace,
    N: int,
    n_boot: int = 200,
    ci: float = 0.95,
    seed: int = 0,
) -> SobolResult:
    """Total-effect (and first-order) indices from block evaluations.

    Small negative estimates are Monte-Carlo noise and are reported as-is;
    a model with zero output variance has no defined indices and the
    result is flagged degenerate.
    """
    d = space.dim
    fA, fB, fAB, fBA = split_blocks(evaluations, d, N)
    total, first, V = _indices(fA, fB, fAB, fBA)
    if total is None:
        nan = np.full(d, np.nan)
        return SobolResult(space.names, nan, nan.copy(), nan.copy(), nan.copy(),
                           float(V), N, degenerate=True)

    rng = np.random.default_rng(seed)
    boot = np.empty((n_boot, d))
    for b in range(n_boot):
        idx = rng.integers(0, N, N)
        t, _, _ = _indices(
            fA[idx], fB[idx], [f[idx] for f in fAB], [f[idx] for f in fBA]
        )
        boot[b] = t if t is not None else np.nan
    alpha = (1.0 - ci) / 2.0
    lo = np.nanpercentile(boot, 100 * alpha, axis=0)
    hi = np.nanpercentile(boot, 100 * (1 - alpha), axis=0)
    return SobolResult(space.names, total, lo, hi, first, float(V), N)


# -- model evaluation over parameter rows ------------------------------------


def _replicate_mean(args):
    mp_values, names, row, observable, replicates, horizon, base_seed = args
    mp = ModelParams(**mp_values).with_values(**dict(zip(names, row)))
    vals = []
    for r in range(replicates):
        out = run(mp, seed=base_seed + r, horizon=horizon)
        vals.append(out.series(observable)[-1])
    return float(np.mean(vals))


def _mp_to_dict(mp: ModelParams) -> dict:
    from dataclasses import asdict

    d = asdict(mp)
    relax = d.pop("relax")
    from .diffcore import RelaxConfig

    d["relax"] = RelaxConfig(**relax)
    return d


def evaluate_rows(
    mp: ModelParams,
    space: ParamSpace,
    rows: np.ndarray,
    observable: str,
    replicates: int = DEFAULT_REPLICATES,
    horizon: Optional[int] = None,
    base_seed: int = 9_001,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Replicate-averaged final observable per parameter row.

    Every row reuses the same replicate seeds (common random numbers), so
    differences across rows reflect parameters rather than noise. Rows are
    independent; set workers > 1 (or DIFFEPI_WORKERS) for a process pool.
    """
    horizon = horizon or mp.horizon
    if workers is None:
        workers = int(os.environ.get("DIFFEPI_WORKERS", "1"))
    mp_values = _mp_to_dict(mp)
    tasks = [
        (mp_values, space.names, row, observable, replicates, horizon, base_seed)
        for row in rows
    ]
    if workers > 1:
        import multiprocessing as mp_pool

        with mp_pool.Pool(workers) as pool:
            return np.array(pool.map(_replicate_mean, tasks))
    return np.array([_replicate_mean(t) for t in tasks])


def sobol_on_model(
    mp: ModelParams,
    space: ParamSpace,
    N: int,
    observable: str,
    replicates: int = DEFAULT_REPLICATES,
    horizon: Optional[int] = None,
    seed: int = 0,
    workers: Optional[int] = None,
) -> SobolResult:
    rows = saltelli_sample(space, N, seed=seed)
    values = evaluate_rows(
        mp, space, rows, observable, replicates, horizon, base_seed=9_001 + seed,
        workers=workers,
    )
    return sobol_total(values, space, N, seed=seed)


@dataclass
class OatResult:
    parameter: str
    values: np.ndarray
    mean_series: np.ndarray  # (n_values, T)
    final_mean: np.ndarray
    final_se: np.ndarray
    observable: str


def oat_sweep(
    mp: ModelParams,
    parameter: str,
    values: Sequence[float],
    observable: str,
    replicates: int = DEFAULT_REPLICATES,
    horizon: Optional[int] = None,
    base_seed: int = 4_242,
) -> OatResult:
    """Vary one parameter, hold the rest; replicate-averaged trajectories.

    Common random numbers across values isolate the parameter's effect.
    """
    if parameter not in LEARNABLE_NAMES:
        raise ConfigurationError(f"unknown parameter {parameter!r}")
    horizon = horizon or mp.horizon
    values = np.asarray(list(values), dtype=np.float64)
    series = np.empty((len(values), horizon))
    finals = np.empty((len(values), replicates))
    for vi, v in enumerate(values):
        mpv = mp.with_values(**{parameter: float(v)})
        reps = []
        for r in range(replicates):
            out = run(mpv, seed=base_seed + r, horizon=horizon)
            reps.append(out.series(observable))
        reps = np.asarray(reps)
        series[vi] = reps.mean(axis=0)
        finals[vi] = reps[:, -1]
    return OatResult(
        parameter=parameter,
        values=values,
        mean_series=series,
        final_mean=finals.mean(axis=1),
        final_se=finals.std(axis=1, ddof=1) / np.sqrt(replicates),
        observable=observable,
    )


# documented default study bounds for the epidemic model; ranges follow the
# qualitative sweeps (transmission and behaviour spreads, economics wide)
DEFAULT_EPIDEMIC_BOUNDS = {
    "transmission_prob": (0.05, 0.6),
    "encounter_prob": (0.1, 0.7),
    "severity_mean": (0.05, 1.0),
    "severity_sd": (0.2, 1.5),
    "age_impact": (0.01, 0.04),
    "price": (1.0, 10.0),
    "bill_mean": (100.0, 600.0),
    "salary_mean": (300.0, 900.0),
    "supply_mean": (5.0, 25.0),
}

# grouping used when reporting grouped influences
DEFAULT_GROUPS = {
    "transmission": ("transmission_prob", "encounter_prob"),
    "health": ("severity_mean", "severity_sd", "age_impact"),
    "economic": ("price", "bill_mean", "salary_mean", "supply_mean"),
}
