"""Losses and stateless layer functions."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor


def log_softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = log_softmax_array(x.data, axis=axis)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(y, (x,), backward)


def cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"expected B x C logits and B targets, got {logits.shape} and {targets.shape}")
    n_classes = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexError(f"target index out of range [0, {n_classes})")
    logp = log_softmax(logits, axis=1)
    rows = np.arange(len(targets))
    return -logp[rows, targets].mean()


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


class BatchNormState:
    """Affine parameters plus running statistics for one feature block."""

    def __init__(self, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, state: BatchNormState, training: bool, update_stats: bool = True) -> Tensor:
    if x.ndim != 2:
        raise ValueError("batch_norm expects a B x F tensor")
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs at least two rows")
        mean = x.mean(axis=0, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=0, keepdims=True)
        x_hat = centered / (var + state.eps).sqrt()
        if update_stats:
            n = x.shape[0]
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mean.data[0]
            # running variance tracks the unbiased estimate
            state.running_var[...] = (1 - m) * state.running_var + m * var.data[0] * n / (n - 1)
    else:
        scale = 1.0 / np.sqrt(state.running_var + state.eps)
        x_hat = (x - state.running_mean.astype(x.dtype)) * scale.astype(x.dtype)
    return x_hat * state.gamma + state.beta
