"""Training objective: reconstruction NLL, Gaussian-mixture KL and sentiment cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import Tensor, as_tensor, exp, log_softmax
from .numerics.functional import log_sigmoid, take_along_last


def reconstruction_loss(log_probs: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean per-token negative log-likelihood over the valid (non-PAD) positions.

    ``log_probs`` is ``(B, T, V)`` (or ``(T, V)``), ``targets`` the matching ids.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.shape[:-1] != targets.shape:
        raise ContractError(f"step distributions {log_probs.shape} do not match targets {targets.shape}")
    picked = take_along_last(log_probs, targets)
    if mask is None:
        return -picked.mean()
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractError("no valid target positions")
    return -(picked * mask).sum() / count


def kl_gmm(post_means, post_log_vars, prior_means, sigma: float, weights: np.ndarray | None = None) -> Tensor:
    """Closed-form KL between per-component posterior and prior Gaussians.

    Per component j and dimension: ``log(sigma/sigma') + (sigma'^2 + (mu'-mu)^2)/(2 sigma^2) - 1/2``,
    summed over dimensions and over all components (unweighted unless ``weights``
    is given). A leading batch axis on the posterior is averaged out.
    """
    post_means, post_log_vars, prior_means = (as_tensor(t) for t in (post_means, post_log_vars, prior_means))
    if post_means.shape[-2:] != prior_means.shape or post_log_vars.shape != post_means.shape:
        raise ContractError(f"component shapes disagree: posterior {post_means.shape}, "
                            f"log_vars {post_log_vars.shape}, prior {prior_means.shape}")
    var = 2.0 * sigma ** 2
    diff = post_means - prior_means
    per_dim = (math.log(sigma) - 0.5 * post_log_vars) + (exp(post_log_vars) + diff * diff) * (1.0 / var) - 0.5
    per_comp = per_dim.sum(axis=-1)
    if weights is not None:
        per_comp = per_comp * np.asarray(weights, dtype=np.float64)
    total = per_comp.sum(axis=-1)
    return total.mean() if total.ndim else total


def sentiment_ce(scores_logits: Tensor, target, head: str = "sigmoid") -> Tensor:
    """Cross-entropy of the sentiment predictor from pre-squash logits ``(B, N)``.

    ``sigmoid``: binary CE summed over classes with a one-hot target.
    ``softmax``: the usual categorical CE. Averaged over the batch.
    """
    logits = as_tensor(scores_logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    n = logits.shape[-1]
    if target.size != logits.shape[0]:
        raise ContractError(f"{target.size} targets for {logits.shape[0]} score rows")
    if target.min() < 0 or target.max() >= n:
        raise ContractError(f"sentiment target out of range [0, {n}): {target.tolist()}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(target.size), target] = 1.0
    if head == "softmax":
        return -(log_softmax(logits, axis=-1) * onehot).sum(axis=-1).mean()
    # log(1 - sigmoid(x)) = log_sigmoid(-x)
    per = log_sigmoid(logits) * onehot + log_sigmoid(-logits) * (1.0 - onehot)
    return -per.sum(axis=-1).mean()


@dataclass
class LossBreakdown:
    loss_rc: Tensor
    loss_rc_aux: Tensor | None
    loss_z: Tensor | None
    loss_pre: Tensor | None
    beta: float = 2.0
    gamma: float = 0.3
    aux_weight: float = 1.0
    total: Tensor | None = None

    def values(self) -> dict:
        f = lambda t: 0.0 if t is None else float(t.item())
        return {"loss_rc": f(self.loss_rc), "loss_rc_aux": f(self.loss_rc_aux),
                "loss_z": f(self.loss_z), "loss_pre": f(self.loss_pre), "total": f(self.total)}


def total_loss(parts: LossBreakdown) -> Tensor:
    """``loss_rc + aux_weight * loss_rc_aux + beta * loss_z + gamma * loss_pre`` (absent terms are 0)."""
    total = as_tensor(parts.loss_rc)
    if parts.loss_rc_aux is not None:
        total = total + as_tensor(parts.loss_rc_aux) * parts.aux_weight
    if parts.loss_z is not None:
        total = total + as_tensor(parts.loss_z) * parts.beta
    if parts.loss_pre is not None:
        total = total + as_tensor(parts.loss_pre) * parts.gamma
    parts.total = total
    return total
