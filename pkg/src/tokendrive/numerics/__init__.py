"""Dense float64 primitives with reverse-mode gradients."""
from tokendrive.numerics import autograd as ops
from tokendrive.numerics.autograd import Tensor, avg_rows, no_grad, softmax_rows, layer_norm, gelu
from tokendrive.numerics.gradcheck import GradReport, grad_check
from tokendrive.numerics.nn import (
    MLP, FeedForward, GumbelSample, LayerNorm, Linear, MultiHeadAttention,
    attend_heads, gumbel_softmax, mlp_apply, rope_rotate,
)
from tokendrive.numerics.params import Initializer, ParamStore
from tokendrive.numerics.rng import RngStream

__all__ = [
    "ops", "Tensor", "avg_rows", "no_grad", "softmax_rows", "layer_norm", "gelu",
    "GradReport", "grad_check", "MLP", "FeedForward", "GumbelSample", "LayerNorm", "Linear",
    "MultiHeadAttention", "attend_heads", "gumbel_softmax", "mlp_apply", "rope_rotate",
    "Initializer", "ParamStore", "RngStream",
]
