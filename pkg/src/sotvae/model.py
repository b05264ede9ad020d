"""The assembled sentiment-conditioned comment generator: training losses and inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .batchattn import BatchCoAttention, BatchFormer
from .config import Config
from .data import BOS, EOS, PAD, CommentSample
from .decoder import CommentDecoder, DecoderContext, Generation, SentimentPredictor
from .encoder import MultiModalEncoder, pad_batch
from .latent import SentimentDiversityEncoder
from .losses import LossBreakdown, kl_gmm, reconstruction_loss, sentiment_ce, total_loss
from .numerics import Module, Tensor, log_softmax, no_grad


@dataclass
class Batch:
    sample_ids: list
    frames: np.ndarray        # (B, k, d_in)
    text_ids: np.ndarray      # (B, p)
    text_mask: np.ndarray
    targets: list             # truncated target token lists
    in_ids: np.ndarray        # (B, T+1) BOS + target
    out_ids: np.ndarray       # (B, T+1) target + EOS
    out_mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.sample_ids)


def make_batch(samples: Sequence[CommentSample], cfg: Config) -> Batch:
    frames = np.stack([np.asarray(s.frames, dtype=np.float64) for s in samples])
    text_ids, text_mask = pad_batch([s.surrounding_tokens for s in samples], max_len=cfg.p_max)
    targets = [list(s.target_tokens)[:cfg.max_len] for s in samples]
    width = max(len(t) for t in targets) + 1
    in_ids = np.full((len(samples), width), PAD, dtype=np.int64)
    out_ids = np.full((len(samples), width), PAD, dtype=np.int64)
    out_mask = np.zeros((len(samples), width), dtype=bool)
    for i, t in enumerate(targets):
        in_ids[i, :len(t) + 1] = [BOS] + t
        out_ids[i, :len(t) + 1] = t + [EOS]
        out_mask[i, :len(t) + 1] = True
    labels = np.array([s.sentiment_label for s in samples], dtype=np.int64)
    return Batch([s.sample_id for s in samples], frames, text_ids, text_mask, targets,
                 in_ids, out_ids, out_mask, labels)


class SoTVAE(Module):
    def __init__(self, cfg: Config):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        self.encoder = MultiModalEncoder(cfg, rng)
        self.latent = SentimentDiversityEncoder(cfg, rng)
        self.predictor = SentimentPredictor(cfg.d_model, cfg.d_pre, cfg.n_classes, rng,
                                            cfg.sentiment_head) if cfg.uses_sentiment else None
        self.decoder = CommentDecoder(cfg, rng)
        self.batchattn = None
        if cfg.batch_attention == "full":
            self.batchattn = BatchCoAttention(cfg.d_model, cfg.heads, cfg.d_ff, cfg.coattn_layers,
                                              cfg.dropout, rng)
        elif cfg.batch_attention == "batchformer":
            self.batchattn = BatchFormer(cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout, rng)
        # the auxiliary decoder is the main decoder object itself
        self.aux_decoder = self.decoder if self.batchattn is not None else None
        self.assign_names()

    def trainable(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    # -- training ----------------------------------------------------------
    def training_losses(self, batch: Batch, rng: np.random.Generator) -> LossBreakdown:
        cfg = self.cfg
        self.train()
        self.set_rng(rng)
        ctx = self.encoder(batch.frames, batch.text_ids, batch.text_mask)

        loss_pre = None
        if self.predictor is not None:
            loss_pre = sentiment_ce(self.predictor.logits(ctx.V_hat_I, ctx.V_hat_e), batch.labels,
                                    cfg.sentiment_head)
        weight, v_s = self.latent.embed_sentiment(batch.labels)
        v_z, loss_z = None, None
        if self.latent.has_latent:
            post, lat = self.latent.train_latent(batch.targets, weight, v_s, rng)
            loss_z = kl_gmm(post.means, post.log_vars, self.latent.prior.means, self.latent.prior.sigma,
                            weights=weight.s_onehot if cfg.kl_weighted_by_s else None)
            v_z = lat.V_z

        def recon(frames_vec, text_vec):
            logits = self.decoder(batch.in_ids, DecoderContext(frames_vec, text_vec, v_s, v_z))
            return reconstruction_loss(log_softmax(logits, axis=-1), batch.out_ids, batch.out_mask)

        loss_rc = recon(ctx.V_hat_I, ctx.V_hat_e)
        loss_aux = None
        if isinstance(self.batchattn, BatchCoAttention):
            e_b, i_b = self.batchattn(ctx.V_e, ctx.V_I, ctx.text_mask)
            loss_aux = recon(i_b, e_b)
        elif isinstance(self.batchattn, BatchFormer):
            e_b, i_b = self.batchattn(ctx.V_hat_e, ctx.V_hat_I)
            loss_aux = recon(i_b, e_b)
        parts = LossBreakdown(loss_rc, loss_aux, loss_z, loss_pre, cfg.beta, cfg.gamma, cfg.aux_weight)
        total_loss(parts)
        return parts

    # -- inference ---------------------------------------------------------
    def encode_context(self, batch: Batch):
        self.eval()
        with no_grad():
            return self.encoder(batch.frames, batch.text_ids, batch.text_mask)

    def predict_sentiment(self, batch: Batch) -> np.ndarray:
        if self.predictor is None:
            return np.zeros(len(batch), dtype=np.int64)
        ctx = self.encode_context(batch)
        return self.predictor.predict(ctx.V_hat_I, ctx.V_hat_e)

    def decoder_context(self, batch: Batch, labels=None, eps: np.ndarray | None = None,
                        encoded=None) -> tuple[DecoderContext, np.ndarray]:
        """Inference-path context: predicted (or given) sentiment, prior-sampled latent.

        ``eps=None`` takes the prior component mean. Never touches batch attention or the posterior.
        """
        self.eval()
        with no_grad():
            ctx = encoded if encoded is not None else self.encoder(batch.frames, batch.text_ids,
                                                                   batch.text_mask)
            if labels is None:
                labels = (self.predictor.predict(ctx.V_hat_I, ctx.V_hat_e) if self.predictor is not None
                          else np.zeros(len(batch), dtype=np.int64))
            labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(batch),)).copy()
            weight, v_s = self.latent.embed_sentiment(labels)
            v_z = None
            if self.latent.has_latent:
                if eps is None:
                    eps = np.zeros((len(batch), self.latent.prior.n_components, self.latent.d_z))
                v_z = self.latent.inference_latent(weight, eps).V_z
        return DecoderContext(ctx.V_hat_I, ctx.V_hat_e, v_s, v_z), labels

    def generate(self, batch: Batch, labels=None, eps=None, mode: str = "greedy",
                 temperature: float = 1.0, rng=None, max_len: int | None = None) -> list[Generation]:
        dctx, labels = self.decoder_context(batch, labels, eps)
        gens = self.decoder.generate(dctx, max_len or self.cfg.max_len, mode, temperature, rng)
        for g, s in zip(gens, labels):
            g.sentiment = int(s)
        return gens

    def generate_diverse(self, batch: Batch, n_sentiments: int | None = None, draws_per_sentiment: int = 1,
                         rng: np.random.Generator | None = None, mode: str = "greedy",
                         temperature: float = 1.0) -> list[list[Generation]]:
        """For each sample, one greedy comment per (sentiment class, prior draw).

        Prior draws use ``rng``; without one the component mean is used. Returns a
        list per sample of ``n_sentiments * draws_per_sentiment`` generations, each
        tagged with its conditioning sentiment. Empty comments are kept.
        """
        n = n_sentiments or self.cfg.n_classes
        encoded = self.encode_context(batch)
        out = [[] for _ in range(len(batch))]
        for c in range(n):
            for _ in range(draws_per_sentiment):
                eps = None
                if self.latent.has_latent and rng is not None:
                    eps = self.latent.draw_eps(rng, len(batch))
                label = c % self.cfg.n_classes
                dctx, labels = self.decoder_context(batch, np.full(len(batch), label), eps, encoded)
                gens = self.decoder.generate(dctx, self.cfg.max_len, mode, temperature, rng)
                for i, g in enumerate(gens):
                    g.sentiment = label
                    out[i].append(g)
        return out

    def score_candidates(self, batch_row: Batch, candidates: Sequence[Sequence[int]]) -> np.ndarray:
        """Mean per-token teacher-forced log-likelihood of each candidate for one sample."""
        dctx, _ = self.decoder_context(batch_row)
        rows = np.zeros(len(candidates), dtype=np.int64)
        total, count = self.decoder.sequence_log_likelihood(dctx.select(rows), candidates)
        return total / count
