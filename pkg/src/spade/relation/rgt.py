"""Relation Graph Transformer.

Each block mixes long-range context from graph neighbors and from
non-neighbors, fuses it with the averaged member features through an MLP,
and finishes with a symmetric-normalized GCN step over the fixed graph.
All functions accept ``[N, d]`` or batched ``[B, N, d]`` node features with
matching ``[N, N]`` / ``[B, N, N]`` adjacency.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..tensor import Module, ParamInit, Tensor, ops
from ..tensor.nn import MLP, Linear

MODES = ("set_attention", "literal")


@dataclass(frozen=True)
class RgtConfig:
    d: int = 32
    n_blocks: int = 8
    mode: str = "set_attention"
    neighbor_context: bool = True  # LCNL
    non_neighbor_context: bool = True  # LCNNL
    local_context: bool = True  # LCL
    residual: bool = True
    activation: str = "gelu_tanh"
    norm: bool = True  # layer norm on every block output
    branch_gain: float = 0.1  # init scale of every branch output, so a fresh stack is near identity

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"RGT mode must be one of {MODES}, got {self.mode!r}")
        if self.n_blocks < 0:
            raise ConfigError("RGT block count must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def branch_masks(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor and non-neighbor membership (both exclude self)."""
    G = np.asarray(G, dtype=np.float64)
    eye = np.eye(G.shape[-1])
    return G * (1 - eye), (1 - G) * (1 - eye)


def member_mean(x, member: np.ndarray):
    """phi[P]: mean of member features per node, exact zero when the set is empty."""
    count = member.sum(axis=-1, keepdims=True)
    w = member / np.maximum(count, 1.0)
    return ops.matmul(Tensor._wrap(w), x)


def normalized_adjacency(G: np.ndarray) -> np.ndarray:
    A = np.asarray(G, dtype=np.float64) + np.eye(G.shape[-1])
    dinv = 1.0 / np.sqrt(A.sum(axis=-1))
    return dinv[..., :, None] * A * dinv[..., None, :]


class LongRangeBranch(Module):
    def __init__(self, init: ParamInit, d: int, gain: float = 1.0):
        self.W_Q = Linear(init, d, d, bias=False)
        self.W_K = Linear(init, d, d, bias=False)
        self.W_V = Linear(init, d, d, bias=False, gain=gain)

    def __call__(self, x, member: np.ndarray, mode: str):
        count = member.sum(axis=-1, keepdims=True)
        scale = 1.0 / np.sqrt(np.maximum(count, 1.0))
        q = self.W_Q(x)
        if mode == "literal":
            k = self.W_K(member_mean(x, member))
            score = ops.mul(ops.sum(ops.mul(k, q), axis=-1, keepdims=True), Tensor._wrap(scale))
            weight = ops.softmax(score, axis=-1)  # one key: identically 1
            v = self.W_V(x)
            gate = np.broadcast_to((count > 0).astype(np.float64), v.shape).copy()
            return ops.mul(ops.mul(_expand_last(weight, v.shape[-1]), v), Tensor._wrap(gate))
        scores = self._scores(x, q, scale)
        attn = ops.masked_softmax(scores, member > 0, axis=-1)
        return ops.matmul(attn, self.W_V(x))

    def _scores(self, x, q, scale):
        raw = ops.matmul(q, ops.swap_last(self.W_K(x)))
        return ops.mul(raw, Tensor._wrap(np.broadcast_to(scale, raw.shape).copy()))

    def attention(self, x, member: np.ndarray) -> np.ndarray:
        """Set-attention weights (rows of empty sets are zero); for inspection."""
        scale = 1.0 / np.sqrt(np.maximum(member.sum(axis=-1, keepdims=True), 1.0))
        return ops.masked_softmax(self._scores(x, self.W_Q(x), scale), member > 0, axis=-1).data


def _expand_last(t, d: int):
    """``[..., 1] -> [..., d]`` by repetition (keeps the broadcast rule strict)."""
    return ops.matmul(t, Tensor._wrap(np.ones((1, d))))


class RgtBlock(Module):
    def __init__(self, init: ParamInit, cfg: RgtConfig):
        d = cfg.d
        g = cfg.branch_gain if cfg.residual else 1.0
        self.pos = LongRangeBranch(init, d, g)
        self.neg = LongRangeBranch(init, d, g)
        self.fuse = MLP(init, 3 * d, d, d, act=cfg.activation, gain=g)
        self.W_l = Linear(init, d, d, gain=g)
        self._cfg = cfg
        self._act = ops.activation(cfg.activation)

    def __call__(self, x, G: np.ndarray):
        cfg = self._cfg
        plus, minus = branch_masks(G)
        zeros = Tensor._wrap(np.zeros(x.shape))
        phi_p = member_mean(x, plus) if cfg.neighbor_context else zeros
        phi_m = member_mean(x, minus) if cfg.non_neighbor_context else zeros

        q = x
        if cfg.neighbor_context:
            q = ops.add(q, self.pos(x, plus, cfg.mode))
        if cfg.non_neighbor_context:
            q = ops.add(q, self.neg(x, minus, cfg.mode))
        fused = self.fuse(ops.concat([q, phi_p, phi_m], axis=-1))
        q1 = ops.add(q, fused) if cfg.residual else fused
        if cfg.local_context:
            A = Tensor._wrap(normalized_adjacency(G))
            local = self._act(self.W_l(ops.matmul(A, q1)))
            q1 = ops.add(q1, local) if cfg.residual else local
        return ops.layer_norm(q1) if cfg.norm else q1


class RgtStack(Module):
    def __init__(self, cfg: RgtConfig = RgtConfig(), seed: int = 0):
        init = ParamInit(seed)
        self.cfg = cfg
        self.blocks = [RgtBlock(init, cfg) for _ in range(cfg.n_blocks)]

    def __call__(self, x, G: np.ndarray):
        """The graph stays fixed across blocks."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        G = np.asarray(G)
        for block in self.blocks:
            x = block(x, G)
        return x


def rgt_forward(x, G, stack: RgtStack):
    return stack(x, G)
