"""Dense float64 tensors with reverse-mode automatic differentiation."""
from .ops import (
    normalize_sum,
    l2norm,
    conv2d,
    conv3d,
    gather_columns,
    linear_resize_matrix,
    resize_axis,
    segment_log_mean,
    segment_sum,
    softmax_axis,
    take_along_axis,
    upsample,
)
from .tensor import (
    LOG_EPS,
    Tensor,
    abs_,
    add,
    as_tensor,
    clamp,
    concat,
    div,
    elementwise,
    exp,
    getitem,
    log,
    mean,
    mul,
    neg,
    no_grad,
    pad,
    reduce,
    relu,
    reshape,
    sigmoid,
    square,
    stack,
    sub,
    sum_,
    topological_order,
    transpose,
    where,
)

__all__ = [
    "LOG_EPS",
    "Tensor",
    "abs_",
    "add",
    "as_tensor",
    "clamp",
    "concat",
    "conv2d",
    "conv3d",
    "div",
    "elementwise",
    "exp",
    "gather_columns",
    "getitem",
    "linear_resize_matrix",
    "l2norm",
    "log",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "normalize_sum",
    "pad",
    "reduce",
    "relu",
    "reshape",
    "resize_axis",
    "segment_log_mean",
    "segment_sum",
    "sigmoid",
    "softmax_axis",
    "square",
    "stack",
    "sub",
    "sum_",
    "take_along_axis",
    "topological_order",
    "transpose",
    "upsample",
    "where",
]
