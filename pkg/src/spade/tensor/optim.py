"""First-order optimizers over named parameter dicts."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ConfigError
from .core import Tensor


class Optimizer:
    def __init__(self, params: Mapping[str, Tensor], lr: float):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params = dict(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                self._update(name, p, p.grad)

    def _update(self, name: str, p: Tensor, g: np.ndarray) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self._buf: dict[str, np.ndarray] = {}

    def _update(self, name, p, g):
        if self.momentum:
            buf = self._buf.get(name)
            buf = g.copy() if buf is None else self.momentum * buf + g
            self._buf[name] = buf
            g = buf
        p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def _update(self, name, p, g):
        if self.lr == 0:
            return
        m = self._m.get(name, np.zeros_like(g))
        v = self._v.get(name, np.zeros_like(g))
        t = self._t.get(name, 0) + 1
        m = self.b1 * m + (1 - self.b1) * g
        v = self.b2 * v + (1 - self.b2) * g * g
        self._m[name], self._v[name], self._t[name] = m, v, t
        mhat = m / (1 - self.b1**t)
        vhat = v / (1 - self.b2**t)
        if self.weight_decay:
            p.data -= self.lr * self.weight_decay * p.data
        p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind: str, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(params, lr, momentum=momentum)
    raise ConfigError(f"unknown optimizer {kind!r}; expected 'adam' or 'sgd'")


def step_decay(base_lr: float, epoch: int, total: int, drop_at: float = 0.75, factor: float = 0.1) -> float:
    """Constant lr, multiplied by ``factor`` once ``drop_at`` of the run has elapsed."""
    return base_lr * (factor if epoch >= int(round(drop_at * total)) else 1.0)
