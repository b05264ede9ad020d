"""Co-attention along the batch axis, used only while training.

Each text position (and each frame slot) attends over the *samples* of the
mini-batch, so every sample mixes in information from the other B-1 samples.
The result feeds an auxiliary decoder that shares its weights with the main one.
No positional encoding is applied on the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import AttentionPool, masked_mean
from .errors import ContractError, ModeError, ShapeError
from .numerics import CrossAttentionLayer, Module, Tensor, TransformerEncoderLayer


def canonical_order(*arrays: np.ndarray) -> np.ndarray:
    """A permutation that sorts batch rows by their raw bytes.

    Running the batch computation in this order and scattering back makes the
    output exactly (bitwise) equivariant to any permutation of the input rows,
    since floating-point reductions over the batch then always happen in the
    same order.
    """
    batch = arrays[0].shape[0]
    rows = np.concatenate([np.ascontiguousarray(a, dtype=np.float64).reshape(batch, -1)
                           for a in arrays], axis=1)
    keys = [rows[i].tobytes() for i in range(batch)]
    return np.array(sorted(range(batch), key=keys.__getitem__), dtype=np.int64)


@dataclass
class BatchFeatures:
    V_e_B: Tensor        # (p, B, d)
    V_I_B: Tensor        # (k, B, d)
    V_hat_e_B: Tensor    # (B, d)
    V_hat_I_B: Tensor    # (B, d)


class BatchCoAttention(Module):
    """Text self-attention over the batch axis per position; frame slots query per-sample text summaries."""

    def __init__(self, d: int, heads: int, d_ff: int, layers: int, dropout: float, rng):
        if layers < 1:
            raise ContractError("batch co-attention needs at least one layer")
        self.x_layers = [TransformerEncoderLayer(d, heads, d_ff, dropout, rng) for _ in range(layers)]
        self.y_layers = [CrossAttentionLayer(d, heads, d_ff, dropout, rng) for _ in range(layers)]
        self.pool_x = AttentionPool(d, rng)
        self.pool_y = AttentionPool(d, rng)

    def features(self, batch_text: Tensor, batch_frames: Tensor, text_mask=None) -> BatchFeatures:
        if not self.training:
            raise ModeError("batch attention is a training-time module; the inference path must bypass it")
        if batch_text.ndim != 3 or batch_frames.ndim != 3:
            raise ShapeError(f"expected (B, p, d) and (B, k, d), got {batch_text.shape} and {batch_frames.shape}")
        batch = batch_text.shape[0]
        if batch < 1 or batch_frames.shape[0] != batch:
            raise ShapeError(f"batch sizes disagree: {batch_text.shape} vs {batch_frames.shape}")
        if text_mask is None:
            text_mask = np.ones(batch_text.shape[:2], dtype=bool)
        text_mask = np.asarray(text_mask, dtype=bool)

        order = canonical_order(batch_text.data, batch_frames.data, text_mask)
        inverse = np.argsort(order)
        text, frames, mask = batch_text[order], batch_frames[order], text_mask[order]

        x = text.transpose(1, 0, 2)            # (p, B, d)
        y = frames.transpose(1, 0, 2)          # (k, B, d)
        key_mask = mask.T[:, None, :]          # (p, 1, B): padded samples are not attended
        for xl, yl in zip(self.x_layers, self.y_layers):
            x = xl(x, mask=key_mask)
            summary = masked_mean(x.transpose(1, 0, 2), mask)     # (B, d)
            y = yl(y, summary.reshape(1, batch, -1))
        x_b, y_b = x.transpose(1, 0, 2), y.transpose(1, 0, 2)
        v_e, _ = self.pool_x(x_b, mask)
        v_i, _ = self.pool_y(y_b)
        return BatchFeatures(x, y, v_e[inverse], v_i[inverse])

    def forward(self, batch_text: Tensor, batch_frames: Tensor, text_mask=None):
        f = self.features(batch_text, batch_frames, text_mask)
        return f.V_hat_e_B, f.V_hat_I_B


class BatchFormer(Module):
    """Plain Transformer layer over the batch axis of the pooled features (ablation variant)."""

    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, rng):
        self.text_layer = TransformerEncoderLayer(d, heads, d_ff, dropout, rng)
        self.frame_layer = TransformerEncoderLayer(d, heads, d_ff, dropout, rng)

    def forward(self, v_hat_e: Tensor, v_hat_i: Tensor):
        if not self.training:
            raise ModeError("batch attention is a training-time module; the inference path must bypass it")
        order = canonical_order(v_hat_e.data, v_hat_i.data)
        inverse = np.argsort(order)
        batch = v_hat_e.shape[0]
        e = self.text_layer(v_hat_e[order].reshape(1, batch, -1))[0]
        i = self.frame_layer(v_hat_i[order].reshape(1, batch, -1))[0]
        return e[inverse], i[inverse]
