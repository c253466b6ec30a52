from .adam import Adam, AdamState, NonFiniteGradientError, adam_step
from .gradcheck import finite_difference_check
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    div,
    exp,
    expm1,
    l2_norm_sq,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    sigmoid_array,
    softplus,
    square,
    stop_gradient,
    sub,
    sum_,
    take,
    zero_grad,
)

__all__ = [
    "Adam",
    "AdamState",
    "NonFiniteGradientError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "clamp",
    "div",
    "exp",
    "expm1",
    "finite_difference_check",
    "l2_norm_sq",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "reshape",
    "sigmoid",
    "sigmoid_array",
    "softplus",
    "square",
    "stop_gradient",
    "sub",
    "sum_",
    "take",
    "zero_grad",
]
