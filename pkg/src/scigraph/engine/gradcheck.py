"""Finite-difference gradient verification for taped computations."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor

__all__ = ["grad_check", "numeric_gradient", "analytic_gradient"]


def analytic_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    """d fn / d x via one taped forward/backward pass."""
    leaf = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        loss = fn(leaf)
        tape.backward(loss)
    if leaf.grad is None:
        return np.zeros_like(x)
    return np.asarray(leaf.grad, dtype=x.dtype)


def numeric_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray,
                     eps: float = 1e-3) -> np.ndarray:
    """Central differences (fn(x+eps) - fn(x-eps)) / 2eps per coordinate."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + eps
        hi = fn(Tensor(x)).item()
        xf[i] = orig - eps
        lo = fn(Tensor(x)).item()
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(x.shape)


def grad_check(fn: Callable[[Tensor], Tensor], x, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map one tensor to a scalar using taped primitives only.
    The error at each coordinate is |a - n| / max(|a|, |n|, 1e-8), so
    zero-gradient coordinates are handled by the floor.
    """
    x = np.ascontiguousarray(np.asarray(x.data if isinstance(x, Tensor) else x))
    analytic = analytic_gradient(fn, x).astype(np.float64)
    numeric = numeric_gradient(fn, x, eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
