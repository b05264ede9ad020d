"""Multi-modal context encoder: frame projection, LSTM text encoder and co-attention."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PAD
from .errors import ContractError, ShapeError
from .numerics import (LSTM, CrossAttentionLayer, Dropout, Embedding, Linear, Module,
                       Tensor, TransformerEncoderLayer, softmax, tanh)
from .numerics.tensor import matmul


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD, min_len: int = 1,
              max_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token sequences into ``(ids, mask)``; an empty sequence becomes one valid PAD."""
    seqs = [list(s) if max_len is None else list(s)[-max_len:] for s in seqs]
    width = max(min_len, max((len(s) for s in seqs), default=0))
    ids = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :max(len(s), 1)] = True
    return ids, mask


def masked_mean(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Mean over axis 1 of ``(B, L, d)`` restricted to valid positions."""
    if mask is None:
        return x.mean(axis=1)
    w = mask / mask.sum(axis=1, keepdims=True)
    return matmul(Tensor(w[:, None, :]), x)[:, 0]


class AttentionPool(Module):
    """Weighting layer: softmax over positions of a tanh-MLP score, then a convex combination."""

    def __init__(self, d: int, rng):
        self.hidden = Linear(d, d, rng)
        self.score = Linear(d, 1, rng)

    def weights(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        scores = self.score(tanh(self.hidden(x)))[..., 0]
        return softmax(scores, axis=-1, mask=mask)

    def forward(self, x: Tensor, mask: np.ndarray | None = None):
        alpha = self.weights(x, mask)
        pooled = matmul(alpha.reshape(alpha.shape[0], 1, alpha.shape[1]), x)[:, 0]
        return pooled, alpha


class CoAttention(Module):
    """L encoder layers on X, L cross layers where Y queries X, then attention pooling of both."""

    def __init__(self, d: int, heads: int, d_ff: int, layers: int, dropout: float, rng):
        if layers < 1:
            raise ContractError("co-attention needs at least one layer")
        self.x_layers = [TransformerEncoderLayer(d, heads, d_ff, dropout, rng) for _ in range(layers)]
        self.y_layers = [CrossAttentionLayer(d, heads, d_ff, dropout, rng) for _ in range(layers)]
        self.pool_x = AttentionPool(d, rng)
        self.pool_y = AttentionPool(d, rng)

    def stack(self, x: Tensor, y: Tensor, x_mask=None):
        """Run the layer stack; returns the final-layer sequences ``(X^L, Y^L)``."""
        key_mask = None if x_mask is None else x_mask[:, None, :]
        for xl, yl in zip(self.x_layers, self.y_layers):
            x = xl(x, mask=key_mask)
            y = yl(y, x, mask=key_mask)
        return x, y

    def forward(self, x: Tensor, y: Tensor, x_mask=None, y_mask=None, return_weights=False):
        unbatched = x.ndim == 2
        if unbatched:
            x, y = x.reshape(1, *x.shape), y.reshape(1, *y.shape)
            x_mask = None if x_mask is None else np.asarray(x_mask)[None]
            y_mask = None if y_mask is None else np.asarray(y_mask)[None]
        if x.shape[1] == 0 or y.shape[1] == 0:
            raise ContractError(f"co-attention needs non-empty inputs, got {x.shape} and {y.shape}")
        if x.shape[-1] != y.shape[-1]:
            raise ShapeError(f"co-attention widths differ: {x.shape} vs {y.shape}")
        xl, yl = self.stack(x, y, x_mask)
        x_hat, ax = self.pool_x(xl, x_mask)
        y_hat, ay = self.pool_y(yl, y_mask)
        if unbatched:
            x_hat, y_hat, ax, ay = x_hat[0], y_hat[0], ax[0], ay[0]
        return (x_hat, y_hat, ax, ay) if return_weights else (x_hat, y_hat)


@dataclass
class EncodedContext:
    V_I: Tensor          # (B, k, d) projected frames
    V_e: Tensor          # (B, p, d) LSTM states
    V_hat_I: Tensor      # (B, d)
    V_hat_e: Tensor      # (B, d)
    text_mask: np.ndarray


class MultiModalEncoder(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.order = cfg.coattn_order
        self.frame_proj = Linear(cfg.d_in, d, rng)
        self.embed = Embedding(cfg.vocab_size, d, rng)
        self.lstm = LSTM(d, d, rng)
        self.drop = Dropout(cfg.dropout)
        self.coattn = None
        self.coattn_rev = None
        if cfg.coattention:
            self.coattn = CoAttention(d, cfg.heads, cfg.d_ff, cfg.coattn_layers, cfg.dropout, rng)
            if cfg.coattn_order == "coa2":
                self.coattn_rev = CoAttention(d, cfg.heads, cfg.d_ff, cfg.coattn_layers, cfg.dropout, rng)

    def encode_frames(self, frames) -> Tensor:
        """``(B, k, d_in)`` (or a list of equal-length vectors) -> ``(B, k, d)``."""
        if not isinstance(frames, Tensor):
            rows = [np.asarray(f, dtype=np.float64) for f in frames] if isinstance(frames, list) else None
            if rows is not None and len({r.shape for r in rows}) > 1:
                raise ShapeError(f"frame vectors differ in shape: {sorted({r.shape for r in rows})}")
            frames = Tensor(np.asarray(frames, dtype=np.float64))
        if frames.shape[-1] != self.frame_proj.weight.shape[0]:
            raise ShapeError(f"frames have width {frames.shape[-1]}, projection expects "
                             f"{self.frame_proj.weight.shape[0]}")
        if frames.shape[-2] < 1:
            raise ContractError("need at least one frame")
        return self.frame_proj(frames)

    def encode_text(self, ids: np.ndarray) -> Tensor:
        """Token ids ``(B, p)`` -> LSTM hidden states ``(B, p, d)`` from a zero initial state."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            ids = np.full((ids.shape[0], 1), PAD, dtype=np.int64)
        return self.lstm(self.drop(self.embed(ids)))

    def forward(self, frames, text_ids, text_mask) -> EncodedContext:
        V_I = self.drop(self.encode_frames(frames))
        V_e = self.encode_text(text_ids)
        if self.coattn is None:
            V_hat_e, V_hat_I = masked_mean(V_e, text_mask), V_I.mean(axis=1)
        elif self.order == "coa1":
            V_hat_I, V_hat_e = self.coattn(V_I, V_e, y_mask=text_mask)
        else:
            V_hat_e, V_hat_I = self.coattn(V_e, V_I, x_mask=text_mask)
            if self.coattn_rev is not None:
                rev_I, rev_e = self.coattn_rev(V_I, V_e, y_mask=text_mask)
                V_hat_e, V_hat_I = (V_hat_e + rev_e) * 0.5, (V_hat_I + rev_I) * 0.5
        return EncodedContext(V_I, V_e, V_hat_I, V_hat_e, text_mask)
