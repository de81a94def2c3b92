"""Smooth stand-ins for hard if-then rules and calendar arithmetic.

Three relaxations of "x if a > A else 0" are provided, graded by how much
condition precision the surrounding mechanism needs:

- `relax_precise`: rational ReLU gate; exactly 0 for a <= A, within
  xi/(margin+xi) of x above. Used on health-critical transitions.
- `relax_moderate`: ReLU(tanh) gate; exactly 0 below, saturates smoothly.
  Used where a bounded, well-behaved gradient matters more than a sharp
  edge (severity progression gates).
- `relax_fuzzy`: logistic gate, strictly positive everywhere. Used for
  behavioural judgments where the boundary itself is soft.

`periodic_indicator` relaxes the test t == m (mod n) via a cosine
comparison gated by the precise relaxation.

All three accept DTensors, arrays or scalars for the observable `a`, the
threshold `A`, and the payload `x`, and return a single fused graph node
with an analytic backward rule. Gradients at the ReLU kink are defined as
0 (subgradient convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .tensor import DTensor, as_dtensor, make_op, stable_sigmoid, values_of

XI_DEFAULT = 1e-6
K_DEFAULT = 10.0
TEMPERATURE_DEFAULT = 0.5


@dataclass(frozen=True)
class RelaxConfig:
    """Relaxation scales: slack, logistic steepness, categorical temperature."""

    xi: float = XI_DEFAULT
    k: float = K_DEFAULT
    temperature: float = TEMPERATURE_DEFAULT

    def __post_init__(self):
        if self.xi <= 0:
            raise ConfigurationError(f"slack xi must be positive, got {self.xi}")
        if self.k <= 0:
            raise ConfigurationError(f"steepness k must be positive, got {self.k}")
        if self.temperature <= 0:
            raise ConfigurationError(
                f"temperature must be positive, got {self.temperature}"
            )


def relax_precise(a, A, x, xi: float = XI_DEFAULT) -> DTensor:
    """x * ReLU(a-A) / (ReLU(a-A) + xi): hard zero below, ~x above."""
    if xi <= 0:
        raise ConfigurationError(f"slack xi must be positive, got {xi}")
    a, A, x = as_dtensor(a), as_dtensor(A), as_dtensor(x)
    margin = a.values - A.values
    r = np.maximum(margin, 0.0)
    gate = r / (r + xi)
    out = x.values * gate
    slope = np.where(margin > 0.0, xi / ((r + xi) ** 2), 0.0)

    def _bw(g):
        da = g * x.values * slope
        a._accumulate(da)
        A._accumulate(-da)
        x._accumulate(g * gate)

    return make_op(out, (a, A, x), _bw)


def relax_moderate(a, A, x) -> DTensor:
    """x * ReLU(tanh(a-A)): hard zero below, smooth rise with bounded slope."""
    a, A, x = as_dtensor(a), as_dtensor(A), as_dtensor(x)
    th = np.tanh(a.values - A.values)
    gate = np.maximum(th, 0.0)
    out = x.values * gate
    slope = np.where(th > 0.0, 1.0 - th * th, 0.0)

    def _bw(g):
        da = g * x.values * slope
        a._accumulate(da)
        A._accumulate(-da)
        x._accumulate(g * gate)

    return make_op(out, (a, A, x), _bw)


def relax_fuzzy(a, A, x, k: float = K_DEFAULT) -> DTensor:
    """x * sigmoid(k*(a-A)): soft gate, strictly positive, monotone in a."""
    a, A, x = as_dtensor(a), as_dtensor(A), as_dtensor(x)
    gate = stable_sigmoid(k * (a.values - A.values))
    out = x.values * gate
    slope = k * gate * (1.0 - gate)

    def _bw(g):
        da = g * x.values * slope
        a._accumulate(da)
        A._accumulate(-da)
        x._accumulate(g * gate)

    return make_op(out, (a, A, x), _bw)


def periodic_value(t: int, m: int, n: int, xi: float = XI_DEFAULT) -> float:
    """Relaxed indicator of t == m (mod n) as a plain float.

    cos^2((t-m)*pi/n) exceeds cos(pi/n) exactly when the residue matches
    (for integer t), and the excess is pushed through the precise
    relaxation. The margin is normalised by its on-value (1 - cos(pi/n))
    so the indicator error stays ~xi independent of the period.
    """
    if n < 2:
        raise ConfigurationError(f"period n must be >= 2, got {n}")
    if xi <= 0:
        raise ConfigurationError(f"slack xi must be positive, got {xi}")
    thr = math.cos(math.pi / n)
    c = math.cos((t - m) * math.pi / n) ** 2
    arg = max((c - thr) / (1.0 - thr), 0.0)
    return arg / (arg + xi)


def periodic_indicator(t: int, m: int, n: int, xi: float = XI_DEFAULT) -> DTensor:
    """`periodic_value` wrapped as a constant scalar tensor."""
    return DTensor(periodic_value(t, m, n, xi))


# -- hard counterparts (discrete reference semantics) -----------------------


def heaviside(a, A, x=1.0):
    """x if a > A else 0, elementwise; plain arrays/floats."""
    a = values_of(a)
    A = values_of(A)
    x = values_of(x)
    return np.where(a > A, 1.0, 0.0) * x


def exact_periodic(t: int, m: int, n: int) -> int:
    return 1 if t % n == m % n else 0
