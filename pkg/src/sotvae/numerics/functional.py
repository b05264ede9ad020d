"""Neural-network primitives built on :mod:`sotvae.numerics.tensor`.

softmax, log_softmax and layer_norm are fused ops with hand-written
backward passes; lstm_step and multi_head_attention are composed from the
differentiable building blocks so their gradients follow automatically.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import (Tensor, _sigmoid, as_tensor, concat, make, matmul, sigmoid,
                     tanh, unbroadcast)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; ``mask`` (True = keep) zeroes excluded entries.

    Rows whose entries are all masked produce all-zero weights.
    """
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, xd.shape)
        xd = np.where(mask, xd, -np.inf)
    m = xd.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit population variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm expects gain/bias of shape ({d},), got {gain.shape}/{bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make(out, (x, gain, bias), bw, "layer_norm")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"token id out of range [0, {n}): min={ids.min()}, max={ids.max()}")
    out = table.data[ids]

    def bw(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return make(out, (table,), bw, "embedding")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); identity at eval."""
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else y + bias


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], w_ih: Tensor, w_hh: Tensor,
              b: Tensor, x_projected: bool = False) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence; gate order along the 4H axis is (input, forget, cell, output).

    With ``x_projected`` the caller already supplies ``x @ w_ih``.
    """
    h, c = state
    hidden = h.shape[-1]
    if c.shape[-1] != hidden or w_hh.shape != (hidden, 4 * hidden):
        raise ShapeError(f"LSTM state/weight mismatch: h {h.shape}, c {c.shape}, w_hh {w_hh.shape}")
    gx = x if x_projected else matmul(x, w_ih)
    gates = gx + matmul(h, w_hh) + b
    i = sigmoid(gates[..., 0 * hidden:1 * hidden])
    f = sigmoid(gates[..., 1 * hidden:2 * hidden])
    g = tanh(gates[..., 2 * hidden:3 * hidden])
    o = sigmoid(gates[..., 3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, d = x.shape
    return x.reshape(*lead, length, heads, d // heads).swapaxes(-2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, length, heads * dh)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None):
    """Attention over the second-to-last axis. Returns (output, weights)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, k.swapaxes(-1, -2)) * scale
    weights = softmax(scores, axis=-1, mask=mask)
    return matmul(weights, v), weights


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor,
                         mask: np.ndarray | None = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention.

    ``q`` is ``(..., Lq, d)``, ``k``/``v`` are ``(..., Lk, d)``; ``mask`` broadcasts
    to ``(..., Lq, Lk)`` with True marking attendable keys.
    """
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    qh = split_heads(linear(q, wq, bq), heads)
    kh = split_heads(linear(k, wk, bk), heads)
    vh = split_heads(linear(v, wv, bv), heads)
    if mask is not None:
        mask = np.expand_dims(np.asarray(mask, dtype=bool), -3)
    out, weights = scaled_dot_attention(qh, kh, vh, mask)
    out = linear(merge_heads(out), wo, bo)
    return (out, weights) if return_weights else out


def take_along_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """``x[..., ids]`` picking one entry of the last axis per leading position."""
    ids = np.asarray(ids, dtype=np.int64)
    xd = x.data
    out = np.take_along_axis(xd, ids[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros(xd.shape)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return make(out, (x,), bw, "take_along_last")


def log_sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    return make(out, (x,), lambda g: (g * (1.0 - _sigmoid(xd)),), "log_sigmoid")


__all__ = [
    "softmax", "log_softmax", "layer_norm", "embedding", "dropout", "linear",
    "lstm_step", "multi_head_attention", "scaled_dot_attention", "split_heads",
    "merge_heads", "take_along_last", "log_sigmoid", "concat", "as_tensor",
    "unbroadcast",
]
