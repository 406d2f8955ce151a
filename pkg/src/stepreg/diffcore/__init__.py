from .params import ParameterSet, read_tensor_file, write_tensor_file
from .tensor import (
    Tensor,
    add,
    add_bias,
    add_const,
    concat_cols,
    constant,
    exp,
    grad_check,
    layer_norm,
    linear,
    log1p,
    log_softmax_rows,
    l2_normalize_rows,
    matmul,
    mean_all,
    mlp2,
    mul,
    mul_const,
    multi_head_attention,
    place_rows,
    relu,
    rowsum,
    scale,
    slice_cols,
    softmax_rows,
    sqrt_clamped,
    sub,
    sum_all,
    take_rows,
)

__all__ = [
    "ParameterSet",
    "Tensor",
    "add",
    "add_bias",
    "add_const",
    "concat_cols",
    "constant",
    "exp",
    "grad_check",
    "layer_norm",
    "linear",
    "log1p",
    "log_softmax_rows",
    "l2_normalize_rows",
    "matmul",
    "mean_all",
    "mlp2",
    "mul",
    "mul_const",
    "multi_head_attention",
    "place_rows",
    "read_tensor_file",
    "relu",
    "rowsum",
    "scale",
    "slice_cols",
    "softmax_rows",
    "sqrt_clamped",
    "sub",
    "sum_all",
    "take_rows",
    "write_tensor_file",
]
