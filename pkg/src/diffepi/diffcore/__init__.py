"""Autodiff tensors, selective relaxations, and reparametrised sampling."""

from .relax import (
    K_DEFAULT,
    TEMPERATURE_DEFAULT,
    XI_DEFAULT,
    RelaxConfig,
    exact_periodic,
    heaviside,
    periodic_indicator,
    periodic_value,
    relax_fuzzy,
    relax_moderate,
    relax_precise,
)
from .sampling import (
    NoiseStream,
    sample_bernoulli_reparam,
    sample_categorical_reparam,
    sample_lognormal_reparam,
    sample_normal_reparam,
    sample_uniform_reparam,
)
from .tensor import (
    DTensor,
    as_dtensor,
    backward,
    clip,
    exp,
    grad_enabled,
    log,
    make_op,
    matmul,
    maximum,
    minimum,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    sqrt0,
    stack,
    stable_sigmoid,
    take,
    take_along,
    tanh,
    tmean,
    tmin,
    transpose,
    tsum,
    values_of,
    where_const,
    zero_grads,
)

__all__ = [
    "DTensor",
    "NoiseStream",
    "RelaxConfig",
    "XI_DEFAULT",
    "K_DEFAULT",
    "TEMPERATURE_DEFAULT",
    "as_dtensor",
    "backward",
    "clip",
    "exact_periodic",
    "exp",
    "grad_enabled",
    "heaviside",
    "log",
    "make_op",
    "matmul",
    "maximum",
    "minimum",
    "no_grad",
    "periodic_indicator",
    "periodic_value",
    "relax_fuzzy",
    "relax_moderate",
    "relax_precise",
    "relu",
    "reshape",
    "sample_bernoulli_reparam",
    "sample_categorical_reparam",
    "sample_lognormal_reparam",
    "sample_normal_reparam",
    "sample_uniform_reparam",
    "sigmoid",
    "softplus",
    "sqrt0",
    "stack",
    "stable_sigmoid",
    "take",
    "take_along",
    "tanh",
    "tmean",
    "tmin",
    "transpose",
    "tsum",
    "values_of",
    "where_const",
    "zero_grads",
]
