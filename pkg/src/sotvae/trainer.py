"""Optimisation loop: Adam with bias correction, step-decay schedule, clipping, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .data import Corpus
from .errors import ContractError, NonFiniteError, ParseError
from .model import SoTVAE, make_batch
from .numerics import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOSS_FIELDS = ("step", "epoch", "lr", "loss_rc", "loss_rc_aux", "loss_z", "loss_pre", "total")


def lr_at_epoch(cfg: Config, epoch: int) -> float:
    """Base rate, multiplied by ``lr_decay`` once per ``decay_every`` epochs past ``decay_after``.

    Epochs are 0-indexed, so with the defaults epochs 0-5 run at the base rate
    and epoch 6 is the first at a quarter of it.
    """
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    drops = max(0, epoch - cfg.decay_after) // cfg.decay_every
    return cfg.lr * cfg.lr_decay ** drops


def adam_step(params, grads, moments, lr: float, t: int, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update on lists of arrays. ``moments`` is ``(m_list, v_list)``; ``t`` is 1-based.

    Returns ``(new_params, (new_m, new_v))``; inputs are not modified.
    """
    m_list, v_list = moments
    new_p, new_m, new_v = [], [], []
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, m_list, v_list):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, (new_m, new_v)


class Adam:
    """Adam over named parameters; moments are kept per name so they can be checkpointed."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        names = [n for n, _ in self.params]
        params = [p.data for _, p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for _, p in self.params]
        new_p, (new_m, new_v) = adam_step(params, grads, ([self.m[n] for n in names], [self.v[n] for n in names]),
                                          lr, self.t, self.beta1, self.beta2, self.eps)
        for (n, p), value, m, v in zip(self.params, new_p, new_m, new_v):
            p.data = value
            self.m[n], self.v[n] = m, v

    def state_tensors(self) -> dict:
        out = {f"adam.m.{n}": m for n, m in self.m.items()}
        out.update({f"adam.v.{n}": v for n, v in self.v.items()})
        return out

    def load_state_tensors(self, tensors: dict, t: int):
        for n in self.m:
            self.m[n] = np.array(tensors[f"adam.m.{n}"])
            self.v[n] = np.array(tensors[f"adam.v.{n}"])
        self.t = t


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class TrainResult:
    model: SoTVAE
    optimizer: Adam
    loss_log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    epoch: int = -1


def save_training_checkpoint(path, model: SoTVAE, optimizer: Adam | None, epoch: int, step: int,
                             rng: np.random.Generator | None = None):
    tensors = model.state_dict()
    meta = {"config": model.cfg.to_dict(), "epoch": epoch, "step": step}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
        meta["adam_t"] = optimizer.t
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    save_checkpoint(path, tensors, model.cfg.hash(), meta)


def load_model(path) -> tuple[SoTVAE, dict, dict]:
    """Rebuild a model from a checkpoint; returns ``(model, all_tensors, meta)``."""
    tensors, config_hash, meta = load_checkpoint(path)
    if "config" not in meta:
        raise ParseError(f"{path}: checkpoint has no embedded config")
    cfg = Config.from_dict(meta["config"])
    if cfg.hash() != config_hash:
        raise ParseError(f"{path}: config hash mismatch ({config_hash[:12]} vs {cfg.hash()[:12]})")
    model = SoTVAE(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model.load_state_dict(params)
    model.eval()
    return model, tensors, meta


def write_loss_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOSS_FIELDS})


def train(cfg: Config, corpus: Corpus, out_dir=None, resume=None, epochs: int | None = None,
          max_steps: int | None = None, on_step=None) -> TrainResult:
    """Train on every sample of ``corpus`` (split beforehand).

    ``resume`` is a checkpoint path written by this function; training continues
    with the epoch after it. ``max_steps`` stops early (used by tests).
    """
    epochs = cfg.epochs if epochs is None else epochs
    if resume is not None:
        model, tensors, meta = load_model(resume)
        cfg = model.cfg
        start_epoch, step = meta["epoch"] + 1, meta["step"]
        opt = Adam(model.trainable())
        opt.load_state_tensors(tensors, meta["adam_t"])
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    else:
        model = SoTVAE(cfg)
        opt = Adam(model.trainable())
        rng = np.random.default_rng([cfg.seed, 1])
        start_epoch, step = 0, 0
    if len(corpus) == 0:
        raise ContractError("cannot train on an empty corpus")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")
    params = model.parameters()
    result = TrainResult(model, opt, epoch=start_epoch - 1)
    samples = corpus.samples
    for epoch in range(start_epoch, epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            batch = make_batch([samples[i] for i in order[start:start + cfg.batch_size]], cfg)
            model.zero_grad()
            try:
                parts = model.training_losses(batch, rng)
                total = parts.total
                if not np.isfinite(total.data).all():
                    raise NonFiniteError("total loss is not finite")
                total.backward()
            except NonFiniteError as exc:
                log.error("non-finite value at step %d (epoch %d): %s", step, epoch, exc)
                raise NonFiniteError(f"step {step}, epoch {epoch}: {exc}") from exc
            clip_grad_norm(params, cfg.grad_clip)
            opt.step(lr)
            row = {"step": step, "epoch": epoch, "lr": lr, **parts.values()}
            result.loss_log.append(row)
            if on_step is not None:
                on_step(row)
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        result.epoch = epoch
        if out is not None:
            path = out / f"epoch{epoch:03d}.ckpt"
            save_training_checkpoint(path, model, opt, epoch, step, rng)
            result.checkpoints.append(path)
            ep_rows = [r for r in result.loss_log if r["epoch"] == epoch]
            if ep_rows:
                log.info("epoch %d lr %.2e loss_rc %.4f total %.4f", epoch, lr,
                         np.mean([r["loss_rc"] for r in ep_rows]), np.mean([r["total"] for r in ep_rows]))
        if max_steps is not None and step >= max_steps:
            break
    if out is not None:
        save_training_checkpoint(out / "model.ckpt", model, opt, result.epoch, step, rng)
        write_loss_csv(out / "loss.csv", result.loss_log)
    model.eval()
    return result
