from .gradcheck import GradReport, grad_check
from .io import FormatError, load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .layers import (conv1d_depthwise, conv2d, cross_entropy, layer_norm, linear, softmax_np,
                     softmax_rows, upsample_nearest2x)
from .module import AdamW, Module, Param, ones, xavier, zeros
from .tensor import (ConfigError, DimensionError, Tensor, add, as_tensor, concat, exp, log, make,
                     matmul, mul, neg, reshape, sigmoid, silu, softplus, softplus_np, square, take_rows,
                     transpose, tsum, tmean)

__all__ = [
    "AdamW", "ConfigError", "DimensionError", "FormatError", "GradReport", "Module", "Param",
    "Tensor", "add", "as_tensor", "concat", "conv1d_depthwise", "conv2d", "cross_entropy", "exp",
    "grad_check", "layer_norm", "linear", "load_checkpoint", "load_tensor", "log", "make",
    "matmul", "mul", "neg", "ones", "reshape", "save_checkpoint", "save_tensor", "sigmoid", "silu",
    "softmax_np", "softmax_rows", "softplus", "softplus_np", "square", "take_rows", "tmean",
    "transpose", "tsum", "upsample_nearest2x", "xavier", "zeros",
]
