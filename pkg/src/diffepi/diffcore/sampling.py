"""Reparametrised random sampling on the autodiff graph.

Draws are expressed as deterministic functions of distribution parameters
and exogenous noise pulled from a NoiseStream, so gradients pass through
sampling. Normal and uniform draws use location-scale reparametrisation;
categorical draws use the Gumbel-softmax relaxation with a Bernoulli
special case (binary concrete).
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .relax import TEMPERATURE_DEFAULT
from .tensor import DTensor, as_dtensor, make_op, stable_sigmoid

_EPS = 1e-12
_U_LO = 1e-12
_U_HI = 1.0 - 1e-12


class NoiseStream:
    """Seeded noise source with a draw counter.

    Two streams built from the same seed produce bit-identical sequences
    as long as the consumer replays the same draw shapes in the same
    order; `draws` records the position. Children derived via `child(i)`
    are statistically independent streams for replicate runs.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.draws = 0
        self._rng = np.random.default_rng(self.seed)

    def child(self, index: int) -> "NoiseStream":
        sub = np.random.SeedSequence([self.seed, int(index)])
        return NoiseStream(int(sub.generate_state(1)[0]))

    def normal(self, shape=()) -> np.ndarray:
        self.draws += 1
        return self._rng.standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        # open-interval draws so log / logit transforms stay finite
        self.draws += 1
        return np.clip(self._rng.random(shape), _U_LO, _U_HI)

    def gumbel(self, shape=()) -> np.ndarray:
        return -np.log(-np.log(self.uniform(shape)))

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        self.draws += 1
        return self._rng.integers(low, high, shape)


def sample_normal_reparam(mu, sigma, noise: NoiseStream) -> DTensor:
    """mu + sigma * eps with eps ~ N(0,1); gradients reach mu and sigma."""
    mu, sigma = as_dtensor(mu), as_dtensor(sigma)
    if np.any(sigma.values < 0):
        raise DomainError("sigma must be nonnegative elementwise")
    shape = np.broadcast_shapes(mu.shape, sigma.shape)
    eps = noise.normal(shape)
    return mu + sigma * eps


def sample_uniform_reparam(lo, hi, noise: NoiseStream) -> DTensor:
    """lo + (hi - lo) * u with u ~ U(0,1)."""
    lo, hi = as_dtensor(lo), as_dtensor(hi)
    shape = np.broadcast_shapes(lo.shape, hi.shape)
    u = noise.uniform(shape)
    return lo + (hi - lo) * u


def sample_lognormal_reparam(log_mu, log_sigma, noise: NoiseStream, shape=()) -> DTensor:
    """exp(log_mu + log_sigma * eps); median exp(log_mu)."""
    log_mu, log_sigma = as_dtensor(log_mu), as_dtensor(log_sigma)
    from .tensor import exp as texp

    eps = noise.normal(shape)
    return texp(log_mu + log_sigma * eps)


def sample_categorical_reparam(
    probs, temperature: float = TEMPERATURE_DEFAULT, noise: NoiseStream | None = None
) -> DTensor:
    """Gumbel-softmax draw over the last axis: a relaxed one-hot on the simplex.

    As temperature -> 0 the output concentrates on a single category, and
    its argmax follows the exact categorical law at any temperature.
    """
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    probs = as_dtensor(probs)
    pv = probs.values
    if np.any(pv < -1e-9):
        raise DomainError("probabilities must be nonnegative")
    sums = pv.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DomainError("probabilities must sum to 1 within 1e-6 per distribution")
    g = noise.gumbel(pv.shape)
    z = (np.log(np.maximum(pv, _EPS)) + g) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=-1, keepdims=True)

    def _bw(grad):
        # softmax jacobian then chain through log(p)/temperature
        dz = y * (grad - (grad * y).sum(axis=-1, keepdims=True))
        probs._accumulate(dz / (temperature * np.maximum(pv, _EPS)))

    return make_op(y, (probs,), _bw)


def sample_bernoulli_reparam(
    p, temperature: float = TEMPERATURE_DEFAULT, noise: NoiseStream | None = None
) -> DTensor:
    """Binary concrete draw: sigmoid((logit p + logistic noise)/temperature).

    The event {output > 1/2} has probability exactly p.
    """
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    p = as_dtensor(p)
    if np.any(p.values < -1e-9) or np.any(p.values > 1.0 + 1e-9):
        raise DomainError("Bernoulli probability must lie in [0, 1]")
    pv = np.clip(p.values, _EPS, 1.0 - _EPS)
    u = noise.uniform(pv.shape)
    logit = np.log(pv) - np.log1p(-pv)
    lnoise = np.log(u) - np.log1p(-u)
    y = stable_sigmoid((logit + lnoise) / temperature)
    # exact endpoints stay exact (deterministic limits; no gradient there)
    interior = (p.values > 0.0) & (p.values < 1.0)
    y = np.where(p.values <= 0.0, 0.0, np.where(p.values >= 1.0, 1.0, y))

    def _bw(grad):
        p._accumulate(
            grad * interior * y * (1.0 - y) / (temperature * pv * (1.0 - pv))
        )

    return make_op(y, (p,), _bw)
