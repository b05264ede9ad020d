"""Sentiment-oriented diversity encoder.

Sentiment labels become one-hot weights and a learned embedding ``V_s``.
The latent space is a Gaussian mixture with one component per sentiment and a
shared standard deviation. A Transformer posterior maps the target comment to
per-component means and log-variances. Both prior and posterior draws use the
reparameterization ``z = sum_j s_j (mu_j + sigma_j * eps_j)``. A fixed-cardinality
random mask then swaps a fraction of the posterior coordinates for prior ones
before the linear ``Encoding_z`` map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EOS
from .encoder import pad_batch
from .errors import ConfigError, ContractError
from .numerics import (Embedding, Linear, Module, Parameter, Tensor,
                       TransformerEncoderLayer, clamp, concat, exp, sinusoidal_positions,
                       stack)
from .numerics.tensor import getitem

LOGVAR_MIN, LOGVAR_MAX = -10.0, 4.0


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ContractError(f"sentiment label out of range [0, {n}): {labels.tolist()}")
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class SentimentWeight:
    label: np.ndarray      # (B,)
    s_onehot: np.ndarray   # (B, N)


@dataclass
class PosteriorParams:
    means: Tensor      # (B, N, d_z)
    log_vars: Tensor   # (B, N, d_z)
    h_T: Tensor        # (B, d)


@dataclass
class LatentVector:
    z: Tensor
    source: str
    mask: np.ndarray | None
    V_z: Tensor | None = None


def mask_count(ratio: float, d_z: int) -> int:
    """Number of prior-sourced coordinates: ``round(ratio * d_z)`` with halves rounded up."""
    return int(math.floor(ratio * d_z + 0.5))


def draw_mask(rng: np.random.Generator, batch: int, d_z: int, ratio: float) -> np.ndarray:
    """Binary ``(batch, d_z)`` masks, each with exactly ``mask_count(ratio, d_z)`` ones."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1], got {ratio}")
    count = mask_count(ratio, d_z)
    mask = np.zeros((batch, d_z))
    if count:
        ranks = np.argsort(rng.random((batch, d_z)), axis=1)[:, :count]
        np.put_along_axis(mask, ranks, 1.0, axis=1)
    return mask


def blend(z_post: Tensor, z_prior: Tensor, mask: np.ndarray) -> Tensor:
    """``(1 - m) * z_post + m * z_prior``."""
    return z_post * (1.0 - mask) + z_prior * mask


def mixture_sample(means: Tensor, std, s_onehot: np.ndarray, eps: np.ndarray) -> Tensor:
    """``sum_j s_j (mu_j + std_j * eps_j)`` for means ``(N, d_z)`` or ``(B, N, d_z)``."""
    eps = np.asarray(eps, dtype=np.float64)
    comp = means + std * eps if isinstance(std, Tensor) else means + float(std) * eps
    w = Tensor(s_onehot[..., None])
    return (comp * w).sum(axis=-2)


class GMMPrior(Module):
    """One isotropic Gaussian per sentiment with a shared standard deviation."""

    def __init__(self, n_components: int, d_z: int, sigma: float, rng, learned: bool = True,
                 standard: bool = False):
        if sigma <= 0:
            raise ConfigError("prior sigma must be positive")
        self.sigma = float(sigma)
        init = np.zeros((n_components, d_z)) if standard else rng.normal(0.0, 0.1, size=(n_components, d_z))
        self.means = Parameter(init)
        self.means.requires_grad = learned and not standard

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def sample(self, weight: SentimentWeight, eps: np.ndarray) -> Tensor:
        return mixture_sample(self.means, self.sigma, weight.s_onehot, eps)

    def density(self, z: np.ndarray, s_onehot: np.ndarray) -> float:
        """Mixture density ``sum_j s_j N(z | mu_j, sigma^2 I)`` at a single point."""
        mu = self.means.data
        d = mu.shape[1]
        sq = ((z[None, :] - mu) ** 2).sum(axis=1)
        comp = np.exp(-0.5 * sq / self.sigma ** 2) / (2 * math.pi * self.sigma ** 2) ** (d / 2)
        return float((np.asarray(s_onehot) * comp).sum())


class PosteriorEncoder(Module):
    """Transformer encoder over ``[sentiment token, y_1..y_T, EOS]`` with N linear heads on h_T."""

    def __init__(self, cfg, n_components: int, rng, init_log_var: float = 0.0):
        d = cfg.d_model
        self.d_z = cfg.d_z
        self.embed = Embedding(cfg.vocab_size, d, rng, scale=1.0)
        self.layers = [TransformerEncoderLayer(d, cfg.heads, cfg.d_ff, cfg.dropout, rng)
                       for _ in range(cfg.posterior_layers)]
        self.heads = [Linear(d, 2 * cfg.d_z, rng) for _ in range(n_components)]
        for head in self.heads:
            # start close to the prior so the first KL values are moderate
            head.weight.data *= 0.1
            head.bias.data[cfg.d_z:] = init_log_var
        self._pe = sinusoidal_positions(cfg.max_len + 64, d)

    def forward(self, targets, sentiment_token: Tensor | None = None) -> PosteriorParams:
        seqs = [list(t) + [EOS] for t in targets]
        ids, mask = pad_batch(seqs)
        x = self.embed(ids)
        last = np.array([len(s) - 1 for s in seqs])
        if sentiment_token is not None:
            x = concat([sentiment_token.reshape(len(seqs), 1, -1), x], axis=1)
            mask = np.concatenate([np.ones((len(seqs), 1), dtype=bool), mask], axis=1)
            last = last + 1
        length = x.shape[1]
        if length > self._pe.shape[0]:
            self._pe = sinusoidal_positions(length, x.shape[-1])
        x = x + self._pe[:length]
        for layer in self.layers:
            x = layer(x, mask=mask[:, None, :])
        h_T = getitem(x, (np.arange(len(seqs)), last))
        outs = [head(h_T) for head in self.heads]
        means = stack([o[:, :self.d_z] for o in outs], axis=1)
        log_vars = clamp(stack([o[:, self.d_z:] for o in outs], axis=1), LOGVAR_MIN, LOGVAR_MAX)
        return PosteriorParams(means, log_vars, h_T)


def sample_posterior(params: PosteriorParams, weight: SentimentWeight, eps: np.ndarray) -> Tensor:
    std = exp(params.log_vars * 0.5)
    return mixture_sample(params.means, std, weight.s_onehot, eps)


class SentimentDiversityEncoder(Module):
    """Sentiment embedding plus (optionally) the Gaussian-mixture latent pathway.

    ``diversity`` selects the pieces: ``send`` keeps only the embedding, ``smd``
    keeps only a single standard-normal latent, ``full`` keeps both with one
    mixture component per sentiment.
    """

    def __init__(self, cfg, rng):
        self.n_classes = cfg.n_classes
        self.d_z = cfg.d_z
        self.mask_ratio = cfg.mask_ratio
        self.sentiment_embed = Embedding(cfg.n_classes, cfg.d_model, rng) if cfg.uses_sentiment else None
        self.prior = self.posterior = self.encode_z = None
        if cfg.uses_latent:
            smd = cfg.diversity == "smd"
            n = cfg.latent_components
            self.prior = GMMPrior(n, cfg.d_z, 1.0 if smd else cfg.sigma, rng,
                                  learned=cfg.prior_means == "learned", standard=smd)
            self.posterior = PosteriorEncoder(cfg, n, rng, init_log_var=2.0 * math.log(self.prior.sigma))
            self.encode_z = Linear(cfg.d_z, cfg.d_model, rng)

    @property
    def has_latent(self) -> bool:
        return self.prior is not None

    def weight(self, labels) -> SentimentWeight:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        onehot = one_hot(labels, self.n_classes)
        if self.has_latent and self.prior.n_components == 1:
            onehot = np.ones((labels.size, 1))
        return SentimentWeight(labels, onehot)

    def embed_sentiment(self, labels) -> tuple[SentimentWeight, Tensor | None]:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        one_hot(labels, self.n_classes)
        v_s = None if self.sentiment_embed is None else self.sentiment_embed(labels)
        return self.weight(labels), v_s

    def draw_eps(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.standard_normal((batch, self.prior.n_components, self.d_z))

    def sample_prior(self, weight: SentimentWeight, eps: np.ndarray) -> Tensor:
        return self.prior.sample(weight, eps)

    def encode_posterior(self, targets, weight: SentimentWeight, v_s: Tensor | None) -> PosteriorParams:
        return self.posterior(targets, v_s)

    def blend_mask(self, z_post: Tensor, z_prior: Tensor, ratio: float,
                   rng: np.random.Generator) -> LatentVector:
        mask = draw_mask(rng, z_post.shape[0], z_post.shape[-1], ratio)
        z = blend(z_post, z_prior, mask)
        return LatentVector(z, "blended", mask, self.encode_z(z))

    def train_latent(self, targets, weight: SentimentWeight, v_s, rng):
        """Posterior/prior draws and the masked blend used on the training path."""
        post = self.encode_posterior(targets, weight, v_s)
        batch = len(weight.label)
        z_post = sample_posterior(post, weight, self.draw_eps(rng, batch))
        z_prior = self.sample_prior(weight, self.draw_eps(rng, batch))
        return post, self.blend_mask(z_post, z_prior, self.mask_ratio, rng)

    def inference_latent(self, weight: SentimentWeight, eps: np.ndarray) -> LatentVector:
        z = self.sample_prior(weight, eps)
        return LatentVector(z, "prior", None, self.encode_z(z))
