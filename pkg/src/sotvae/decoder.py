"""Sentiment predictor and the Transformer comment decoder.

Each decoder layer runs causal self-attention over the prefix, then four
cross-attention blocks in series (frames, text, sentiment, latent), then a
feed-forward block; every sub-block is residual with post layer norm. The
sentiment and latent blocks are skipped when the model variant has no such
input, so their parameters are absent rather than idle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BOS, EOS, PAD
from .errors import ConfigError, ContractError
from .numerics import (Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                       Tensor, no_grad, sigmoid, sinusoidal_positions, softmax)
from .numerics.nn import Residual

CONTEXT_SLOTS = ("frames", "text", "sentiment", "latent")


class SentimentPredictor(Module):
    """``scores = sigmoid(W_pre . LayerNorm(W_I V_I + W_e V_e))`` (softmax head optional)."""

    def __init__(self, d: int, d_pre: int, n_classes: int, rng, head: str = "sigmoid"):
        self.head = head
        self.W_I = Linear(d, d_pre, rng, bias=False)
        self.W_e = Linear(d, d_pre, rng, bias=False)
        self.norm = LayerNorm(d_pre)
        self.W_pre = Linear(d_pre, n_classes, rng, bias=False)

    def logits(self, V_hat_I: Tensor, V_hat_e: Tensor) -> Tensor:
        return self.W_pre(self.norm(self.W_I(V_hat_I) + self.W_e(V_hat_e)))

    def forward(self, V_hat_I: Tensor, V_hat_e: Tensor) -> Tensor:
        z = self.logits(V_hat_I, V_hat_e)
        return softmax(z, axis=-1) if self.head == "softmax" else sigmoid(z)

    def predict(self, V_hat_I: Tensor, V_hat_e: Tensor) -> np.ndarray:
        with no_grad():
            return np.argmax(self.logits(V_hat_I, V_hat_e).data, axis=-1)


@dataclass
class DecoderContext:
    """Per-sample context vectors, each ``(B, d)``; ``None`` when the variant lacks that input."""

    frames: Tensor
    text: Tensor
    sentiment: Tensor | None = None
    latent: Tensor | None = None

    @property
    def batch(self) -> int:
        return self.frames.shape[0]

    def sequences(self) -> dict:
        """Each present slot as a length-1 key/value sequence ``(B, 1, d)``."""
        out = {}
        for name in CONTEXT_SLOTS:
            v = getattr(self, name)
            if v is not None:
                out[name] = v.reshape(v.shape[0], 1, v.shape[-1])
        return out

    def select(self, rows) -> "DecoderContext":
        rows = np.asarray(rows, dtype=np.int64)
        pick = lambda v: None if v is None else v[rows]
        return DecoderContext(pick(self.frames), pick(self.text), pick(self.sentiment), pick(self.latent))


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, dropout: float, slots, rng):
        self.slots = tuple(slots)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.res_self = Residual(d, dropout)
        self.cross = [MultiHeadAttention(d, heads, rng) for _ in self.slots]
        self.res_cross = [Residual(d, dropout) for _ in self.slots]
        self.ffn = FeedForward(d, d_ff, rng)
        self.res_ffn = Residual(d, dropout)

    def forward(self, x: Tensor, causal: np.ndarray, memory: dict) -> Tensor:
        x = self.res_self(x, self.self_attn(x, x, x, mask=causal))
        for name, attn, res in zip(self.slots, self.cross, self.res_cross):
            kv = memory[name]
            x = res(x, attn(x, kv, kv))
        return self.res_ffn(x, self.ffn(x))


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


@dataclass
class DecoderState:
    """Generated prefixes (starting with BOS) plus per-row completion flags."""

    prefix: np.ndarray                      # (B, t) token ids, column 0 is BOS
    done: np.ndarray                        # (B,) bool
    logprob: np.ndarray = field(default=None)
    n_scored: np.ndarray = field(default=None)

    @classmethod
    def start(cls, batch: int) -> "DecoderState":
        return cls(np.full((batch, 1), BOS, dtype=np.int64), np.zeros(batch, dtype=bool),
                   np.zeros(batch), np.zeros(batch, dtype=np.int64))


@dataclass
class Generation:
    tokens: list
    sentiment: int | None = None
    mean_logprob: float = 0.0

    @property
    def empty(self) -> bool:
        return len(self.tokens) == 0


class CommentDecoder(Module):
    """Stack of decoder layers over embedded prefixes, with an output projection to the vocabulary."""

    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.slots = ("frames", "text") + (("sentiment",) if cfg.uses_sentiment else ()) \
            + (("latent",) if cfg.uses_latent else ())
        self.vocab_size = cfg.vocab_size
        self.embed = Embedding(cfg.vocab_size, d, rng, scale=1.0)
        self.layers = [DecoderLayer(d, cfg.heads, cfg.d_ff, cfg.dropout, self.slots, rng)
                       for _ in range(cfg.decoder_layers)]
        self.out = Linear(d, cfg.vocab_size, rng)
        self._pe = sinusoidal_positions(cfg.max_len + 64, d)
        self.banned = [PAD, BOS]

    def _memory(self, context: DecoderContext) -> dict:
        memory = context.sequences()
        missing = [s for s in self.slots if s not in memory]
        if missing:
            raise ContractError(f"decoder context is missing {missing}")
        return memory

    def forward(self, in_ids: np.ndarray, context: DecoderContext) -> Tensor:
        """Logits ``(B, T, V)`` for input ids ``(B, T)`` that start with BOS."""
        in_ids = np.asarray(in_ids, dtype=np.int64)
        memory = self._memory(context)
        length = in_ids.shape[1]
        if length > self._pe.shape[0]:
            self._pe = sinusoidal_positions(length, self._pe.shape[1])
        x = self.embed(in_ids) + self._pe[:length]
        causal = causal_mask(length)
        for layer in self.layers:
            x = layer(x, causal, memory)
        return self.out(x)

    def _masked_log_probs(self, logits: Tensor) -> np.ndarray:
        z = logits.data.copy()
        z[..., self.banned] = -np.inf
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def decode_step(self, state: DecoderState, context: DecoderContext) -> np.ndarray:
        """Next-token probabilities ``(B, V)`` after the current prefix; PAD and BOS get zero mass."""
        with no_grad():
            logits = self.forward(state.prefix, context)[:, -1]
        return np.exp(self._masked_log_probs(logits))

    def generate(self, context: DecoderContext, max_len: int = 20, mode: str = "greedy",
                 temperature: float = 1.0, rng: np.random.Generator | None = None) -> list[Generation]:
        if max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {max_len}")
        if mode not in ("greedy", "sample"):
            raise ConfigError(f"unknown decoding mode {mode!r}")
        if mode == "sample" and (rng is None or temperature <= 0):
            raise ConfigError("sampling needs an rng and a positive temperature")
        state = DecoderState.start(context.batch)
        for _ in range(max_len):
            with no_grad():
                logits = self.forward(state.prefix, context)[:, -1]
            logp = self._masked_log_probs(logits)
            if mode == "greedy":
                nxt = np.argmax(logp, axis=-1)
            else:
                scaled = np.where(np.isfinite(logp), logp / temperature, -np.inf)
                p = np.exp(scaled - scaled.max(axis=-1, keepdims=True))
                p /= p.sum(axis=-1, keepdims=True)
                nxt = np.array([rng.choice(p.shape[1], p=row) for row in p])
            live = ~state.done
            state.logprob[live] += logp[live, nxt[live]]
            state.n_scored[live] += 1
            nxt = np.where(state.done, PAD, nxt)
            state.prefix = np.concatenate([state.prefix, nxt[:, None]], axis=1)
            state.done |= nxt == EOS
            if state.done.all():
                break
        out = []
        for row, lp, n in zip(state.prefix[:, 1:], state.logprob, state.n_scored):
            toks = []
            for t in row:
                if t in (EOS, PAD):
                    break
                toks.append(int(t))
            out.append(Generation(toks, None, float(lp / max(n, 1))))
        return out

    def sequence_log_likelihood(self, context: DecoderContext, sequences) -> tuple[np.ndarray, np.ndarray]:
        """Teacher-forced ``(sum log p, token count)`` per sequence, EOS included.

        Scored under the same PAD/BOS-masked distribution that ``decode_step`` returns.
        """
        seqs = [list(s) for s in sequences]
        if len(seqs) != context.batch:
            raise ContractError(f"{len(seqs)} sequences for a context batch of {context.batch}")
        width = max(len(s) for s in seqs) + 1
        in_ids = np.full((len(seqs), width), PAD, dtype=np.int64)
        out_ids = np.full((len(seqs), width), PAD, dtype=np.int64)
        valid = np.zeros((len(seqs), width), dtype=bool)
        for i, s in enumerate(seqs):
            in_ids[i, :len(s) + 1] = [BOS] + s
            out_ids[i, :len(s) + 1] = s + [EOS]
            valid[i, :len(s) + 1] = True
        with no_grad():
            logp = self._masked_log_probs(self.forward(in_ids, context))
        logp = np.take_along_axis(logp, out_ids[..., None], axis=-1)[..., 0]
        logp = np.where(valid, logp, 0.0)
        return logp.sum(axis=1), valid.sum(axis=1)
