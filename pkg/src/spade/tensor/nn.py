"""Small module system: parameter discovery, freezing, state dicts."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ContractError
from .core import Tensor
from . import ops


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class ParamInit:
    """Seeded initializers; every model draws from one of these."""

    def __init__(self, rng: np.random.Generator | int):
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def normal(self, shape, std: float) -> Tensor:
        return Parameter(self.rng.normal(0.0, std, size=shape))

    def xavier(self, fan_in: int, fan_out: int, gain: float = 1.0) -> Tensor:
        std = gain * np.sqrt(2.0 / (fan_in + fan_out))
        return Parameter(self.rng.normal(0.0, std, size=(fan_in, fan_out)))

    def zeros(self, shape) -> Tensor:
        return Parameter(np.zeros(shape))


class Module:
    """Every Tensor attribute is a parameter; Module / list-of-Module attributes are children."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters() if p.requires_grad}

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(f"state dict mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"state dict shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    """Row-vector affine map ``x @ W + b``."""

    def __init__(self, init: ParamInit, n_in: int, n_out: int, bias: bool = True, gain: float = 1.0):
        self.W = init.xavier(n_in, n_out, gain)
        if bias:
            self.b = init.zeros((n_out,))
        else:
            self.b = None

    def __call__(self, x):
        y = ops.matmul(x, self.W)
        return y if self.b is None else ops.add(y, self.b)


class MLP(Module):
    def __init__(self, init: ParamInit, n_in: int, n_hidden: int, n_out: int, act: str = "gelu_tanh", gain: float = 1.0):
        self.fc1 = Linear(init, n_in, n_hidden)
        self.fc2 = Linear(init, n_hidden, n_out, gain=gain)
        self._act = ops.activation(act)

    def __call__(self, x):
        return self.fc2(self._act(self.fc1(x)))
