"""Minimal differentiable-computation substrate: tensors, MLPs, Adam, weight IO."""

from .mlp import (
    MlpParams,
    finite_difference_grads,
    forward_mlp,
    gradient_of,
    init_mlp,
)
from .optim import Adam, OptState, adam_update, init_opt_state, optimizer_step
from .tensor import (
    NonFiniteError,
    NumericError,
    Tensor,
    UnsupportedPrimitiveError,
    as_tensor,
    batched_matmul,
    check_finite,
    concat,
    conv1d,
    conv1d_transpose,
    dense,
    softmax,
    stack,
)
from .weights_io import MAGIC, WeightFileError, load_weights, save_weights

__all__ = [
    "Tensor",
    "NumericError",
    "NonFiniteError",
    "UnsupportedPrimitiveError",
    "as_tensor",
    "concat",
    "stack",
    "dense",
    "batched_matmul",
    "softmax",
    "conv1d",
    "conv1d_transpose",
    "check_finite",
    "MlpParams",
    "init_mlp",
    "forward_mlp",
    "gradient_of",
    "finite_difference_grads",
    "OptState",
    "init_opt_state",
    "adam_update",
    "optimizer_step",
    "Adam",
    "MAGIC",
    "WeightFileError",
    "save_weights",
    "load_weights",
]
