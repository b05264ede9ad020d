"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn().item()
        flat[i] = old - h
        down = fn().item()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    rtol: float = 1e-4, floor: float = 1e-6) -> dict[int, float]:
    """Compare backprop gradients of scalar ``fn()`` against finite differences.

    Returns the max relative error per input index and raises ``AssertionError``
    when any exceeds ``rtol``. ``floor`` keeps near-zero entries from inflating
    the relative error.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    errors = {}
    for idx, t in enumerate(inputs):
        numeric = numerical_grad(fn, t, h)
        errors[idx] = max_rel_error(analytic[idx], numeric, floor)
    worst = max(errors.values()) if errors else 0.0
    if worst > rtol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {rtol:.1e} ({errors})")
    return errors
