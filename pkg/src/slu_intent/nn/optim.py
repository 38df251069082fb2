"""Parameter containers, update rules and the step-halving learning-rate schedule."""
from __future__ import annotations

import math
from collections.abc import Iterator, MutableMapping

import numpy as np

from .tensor import NumericalError, Tensor


class ParamSet(MutableMapping):
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        value.requires_grad = True
        value.name = name
        self._params[name] = value

    def __delitem__(self, name: str) -> None:
        del self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per parameter, zeros for parameters the last backward pass never reached."""
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.items()}

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())


def lr_at_epoch(epoch: int, base: float = 0.001) -> float:
    """Base rate for epochs 1-6, halved at epoch 7 and again every second epoch after."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if base <= 0:
        raise ValueError(f"base learning rate must be positive, got {base}")
    halvings = max(0, (epoch - 5) // 2)
    return base * 2.0 ** (-halvings)


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    grads = params.grads()
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return total


class OptimizerState:
    def __init__(self, base_lr: float = 0.001, epoch: int = 1):
        self.base_lr = base_lr
        self.epoch = epoch
        self.step = 0
        self.moments: dict[str, dict[str, np.ndarray]] = {}

    @property
    def lr(self) -> float:
        return lr_at_epoch(self.epoch, self.base_lr)


class Optimizer:
    """Shared step logic: NaN check, optional clipping, update, clear gradients."""

    def __init__(self, params: ParamSet, lr: float = 0.001, clip_norm: float | None = 5.0):
        self.params = params
        self.state = OptimizerState(lr)
        self.clip_norm = clip_norm

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch

    def step(self, lr: float | None = None) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
        if self.clip_norm:
            clip_grad_norm(self.params, self.clip_norm)
        lr = self.state.lr if lr is None else lr
        self.state.step += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            self._update(name, p, grad, lr)
        self.params.zero_grad()

    def _update(self, name: str, p: Tensor, grad: np.ndarray, lr: float) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"__step__": np.array(self.state.step)}
        for name, moments in self.state.moments.items():
            for key, value in moments.items():
                out[f"{name}::{key}"] = value
        return out

    def load_state_arrays(self, arrays) -> None:
        self.state.step = int(arrays["__step__"])
        self.state.moments = {}
        for key in arrays:
            if key == "__step__":
                continue
            name, moment = key.split("::")
            self.state.moments.setdefault(name, {})[moment] = np.array(arrays[key])


class SGD(Optimizer):
    def _update(self, name, p, grad, lr):
        p.data -= p.data.dtype.type(lr) * grad


class Adam(Optimizer):
    def __init__(self, params: ParamSet, lr: float = 0.001, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 5.0):
        super().__init__(params, lr, clip_norm)
        self.betas = betas
        self.eps = eps

    def _update(self, name, p, grad, lr):
        b1, b2 = self.betas
        moments = self.state.moments.get(name)
        if moments is None:
            moments = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            self.state.moments[name] = moments
        m, v = moments["m"], moments["v"]
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * grad * grad
        t = self.state.step
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def make_optimizer(kind: str, params: ParamSet, lr: float = 0.001, clip_norm: float | None = 5.0) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr, clip_norm=clip_norm)
    if kind == "sgd":
        return SGD(params, lr=lr, clip_norm=clip_norm)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'adam' or 'sgd'")
