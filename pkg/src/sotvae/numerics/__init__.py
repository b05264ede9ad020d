"""Tensor arithmetic, reverse-mode autodiff and neural-network layers."""

from .tensor import (Tensor, as_tensor, concat, exp, grad_enabled, log, matmul,
                     no_grad, relu, sigmoid, softplus, stack, tanh, where, clamp)
from .functional import (dropout, embedding, layer_norm, log_softmax, lstm_step,
                         multi_head_attention, softmax)
from .nn import (LSTM, CrossAttentionLayer, Dropout, Embedding, FeedForward,
                 LayerNorm, Linear, Module, MultiHeadAttention, Parameter,
                 TransformerEncoderLayer, sinusoidal_positions)
from .checkpoint import MAGIC, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad


def backward(loss: Tensor, grad=None):
    """Functional alias of :meth:`Tensor.backward`."""
    loss.backward(grad)


__all__ = [
    "Tensor", "as_tensor", "concat", "exp", "grad_enabled", "log", "matmul", "no_grad",
    "relu", "sigmoid", "softplus", "stack", "tanh", "where", "clamp", "dropout",
    "embedding", "layer_norm", "log_softmax", "lstm_step", "multi_head_attention",
    "softmax", "LSTM", "CrossAttentionLayer", "Dropout", "Embedding", "FeedForward",
    "LayerNorm", "Linear", "Module", "MultiHeadAttention", "Parameter",
    "TransformerEncoderLayer", "sinusoidal_positions", "MAGIC", "load_checkpoint",
    "save_checkpoint", "check_gradients", "numerical_grad", "backward",
]
