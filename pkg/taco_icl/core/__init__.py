"""
Numerical core: differentiable tensors, functions, gradient checking and seeded RNG.
"""
from taco_icl.core.tensor import (
    Tensor,
    as_tensor,
    parameter,
    no_grad,
    is_grad_enabled,
    set_default_dtype,
    get_default_dtype,
    topological_order,
)
from taco_icl.core.functional import (
    matmul,
    linear,
    sigmoid,
    tanh,
    gelu,
    concat,
    stack,
    causal_mask,
    masked_fill,
    masked_softmax,
    softmax,
    log_softmax,
    layer_norm,
    cosine_sim,
    cosine_matrix,
    kl_uniform,
)
from taco_icl.core.module import Module, ParameterSet
from taco_icl.core.gradcheck import grad_check, GradCheckReport
from taco_icl.core.rng import Rng, RNG_ALGORITHM, make_rng, derive_seed, stage_rng, rng_state, restore_rng

__all__ = [
    "Tensor", "as_tensor", "parameter", "no_grad", "is_grad_enabled",
    "set_default_dtype", "get_default_dtype", "topological_order",
    "matmul", "linear", "sigmoid", "tanh", "gelu", "concat", "stack",
    "causal_mask", "masked_fill", "masked_softmax", "softmax", "log_softmax",
    "layer_norm", "cosine_sim", "cosine_matrix", "kl_uniform",
    "Module", "ParameterSet", "grad_check", "GradCheckReport",
    "Rng", "RNG_ALGORITHM", "make_rng", "derive_seed", "stage_rng", "rng_state", "restore_rng",
]
