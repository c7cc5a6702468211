"""Low-rank adapters for the key/value projections of cross-attention."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..tensor import Module, ParamInit, Tensor, ops


class LoraLayer(Module):
    """``x @ (W + B @ D)`` with ``W`` frozen, computed as ``x@W + (x@B)@D``.

    ``D`` starts at zero, so a fresh layer reproduces the base projection
    bit for bit.
    """

    def __init__(self, W, rank: int, init: ParamInit, b_std: float = 0.01):
        W = W.data if isinstance(W, Tensor) else np.asarray(W, dtype=np.float64)
        m_in, m_out = W.shape
        if not 1 <= rank <= min(m_in, m_out):
            raise ConfigError(f"LoRA rank {rank} outside [1, {min(m_in, m_out)}]")
        self.W = Tensor(W.copy())  # frozen: requires_grad=False
        self.B = init.normal((m_in, rank), b_std)
        self.D = init.zeros((rank, m_out))
        self.rank = rank

    def __call__(self, x):
        return ops.add(ops.matmul(x, self.W), ops.matmul(ops.matmul(x, self.B), self.D))

    def delta(self) -> np.ndarray:
        return self.B.data @ self.D.data

    def effective_weight(self) -> np.ndarray:
        return self.W.data + self.delta()


def apply_lora(unet, rank: int, seed: int = 0, b_std: float = 0.01) -> list[LoraLayer]:
    """Swap ``to_k`` and ``to_v`` of every cross-attention layer for LoRA wrappers."""
    init = ParamInit(seed)
    layers = []
    for attn in unet.attention_layers:
        attn.to_k = LoraLayer(attn.to_k.W, rank, init, b_std)
        attn.to_v = LoraLayer(attn.to_v.W, rank, init, b_std)
        layers += [attn.to_k, attn.to_v]
    return layers


def lora_layers(unet) -> list[LoraLayer]:
    return [p for a in unet.attention_layers for p in (a.to_k, a.to_v) if isinstance(p, LoraLayer)]


def kv_weights(unet) -> list[Tensor]:
    """The base key/value matrices, wrapped or not."""
    return [p.W for a in unet.attention_layers for p in (a.to_k, a.to_v)]
