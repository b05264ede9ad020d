"""Parameter containers and the layers the model is assembled from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F
from .tensor import Tensor, concat, relu, stack


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is assigned when the owning model is built."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        """Yield ``(dotted_path, parameter)`` in definition order, each object once."""
        seen: set[int] = set()
        yield from self._named(prefix, seen)

    def _named(self, prefix, seen):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            elif isinstance(value, Module):
                yield from value._named(path + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._named(f"{path}.{i}.", seen)
                    elif isinstance(item, Parameter) and id(item) not in seen:
                        seen.add(id(item))
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def assign_names(self, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_rng(self, rng: np.random.Generator | None):
        """Route every dropout layer's draws through ``rng``."""
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing}, unexpected={unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear expects last dim {self.weight.shape[0]}, got {x.shape}")
        return F.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float | None = None):
        scale = 1.0 / math.sqrt(d) if scale is None else scale
        self.weight = Parameter(rng.normal(0.0, scale, size=(n, d)))

    def forward(self, ids) -> Tensor:
        return F.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = None

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.rng, self.training)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def forward(self, q, k, v, mask=None, return_weights=False):
        return F.multi_head_attention(
            q, k, v, self.heads,
            self.q.weight, self.q.bias, self.k.weight, self.k.bias,
            self.v.weight, self.v.bias, self.o.weight, self.o.bias,
            mask=mask, return_weights=return_weights)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


class Residual(Module):
    """Post-norm sublayer wrapper: ``LayerNorm(x + Dropout(sublayer_out))``."""

    def __init__(self, d: int, dropout: float):
        self.norm = LayerNorm(d)
        self.drop = Dropout(dropout)

    def forward(self, x: Tensor, sub: Tensor) -> Tensor:
        return self.norm(x + self.drop(sub))


class TransformerEncoderLayer(Module):
    """Self-attention + feed-forward, each with residual and post layer norm."""

    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.res_attn = Residual(d, dropout)
        self.ffn = FeedForward(d, d_ff, rng)
        self.res_ffn = Residual(d, dropout)

    def forward(self, x: Tensor, mask=None) -> Tensor:
        x = self.res_attn(x, self.attn(x, x, x, mask=mask))
        return self.res_ffn(x, self.ffn(x))


class CrossAttentionLayer(Module):
    """Queries from one sequence attend to another, followed by feed-forward."""

    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.res_attn = Residual(d, dropout)
        self.ffn = FeedForward(d, d_ff, rng)
        self.res_ffn = Residual(d, dropout)

    def forward(self, y: Tensor, x: Tensor, mask=None) -> Tensor:
        y = self.res_attn(y, self.attn(y, x, x, mask=mask))
        return self.res_ffn(y, self.ffn(y))


class LSTM(Module):
    """Unidirectional single-layer LSTM over ``(batch, time, d_in)`` inputs."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_ih = Parameter(xavier(rng, d_in, 4 * hidden))
        self.w_hh = Parameter(xavier(rng, hidden, 4 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Parameter(bias)

    def step(self, x: Tensor, state):
        return F.lstm_step(x, state, self.w_ih, self.w_hh, self.bias)

    def forward(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        projected = F.matmul(x, self.w_ih)
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        outs = []
        for t in range(length):
            h, c = F.lstm_step(projected[:, t], (h, c), self.w_ih, self.w_hh, self.bias,
                               x_projected=True)
            outs.append(h)
        return stack(outs, axis=1)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d // 2])
    return pe


__all__ = [
    "Parameter", "Module", "Linear", "Embedding", "LayerNorm", "Dropout",
    "MultiHeadAttention", "FeedForward", "Residual", "TransformerEncoderLayer",
    "CrossAttentionLayer", "LSTM", "sinusoidal_positions", "concat",
]
