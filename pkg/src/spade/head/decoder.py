"""Transformer decoders over the diffusion feature map."""

from __future__ import annotations

import numpy as np

from ..tensor import Module, ParamInit, Tensor, ops
from ..tensor.nn import MLP, Linear


def grid_positional_encoding(height: int, width: int, n_freq: int = 4) -> np.ndarray:
    """``[H*W, 4 * n_freq]`` sin/cos features of normalized row and column."""
    ys, xs = np.mgrid[0:height, 0:width]
    coords = np.stack([ys.reshape(-1) / height, xs.reshape(-1) / width], axis=1)
    freqs = np.pi * 2.0 ** np.arange(n_freq)
    ang = coords[:, :, None] * freqs[None, None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=2).reshape(height * width, -1)


class Attention(Module):
    def __init__(self, init: ParamInit, d: int):
        self.q = Linear(init, d, d, bias=False)
        self.k = Linear(init, d, d, bias=False)
        self.v = Linear(init, d, d, bias=False)
        self.o = Linear(init, d, d)
        self._scale = 1.0 / np.sqrt(d)

    def __call__(self, x, mem):
        scores = ops.scale(ops.matmul(self.q(x), ops.swap_last(self.k(mem))), self._scale)
        return self.o(ops.matmul(ops.softmax(scores, axis=-1), self.v(mem)))


class DecoderLayer(Module):
    """Post-norm layer: self-attention, cross-attention to memory, feed-forward."""

    def __init__(self, init: ParamInit, d: int, hidden: int):
        self.self_attn = Attention(init, d)
        self.cross_attn = Attention(init, d)
        self.ffn = MLP(init, d, hidden, d)

    def __call__(self, q, mem):
        q = ops.layer_norm(ops.add(q, self.self_attn(q, q)))
        q = ops.layer_norm(ops.add(q, self.cross_attn(q, mem)))
        return ops.layer_norm(ops.add(q, self.ffn(q)))


class Decoder(Module):
    def __init__(self, init: ParamInit, d: int, n_layers: int = 3, hidden: int | None = None):
        self.layers = [DecoderLayer(init, d, hidden or 2 * d) for _ in range(n_layers)]

    def __call__(self, q, mem):
        for layer in self.layers:
            q = layer(q, mem)
        return q


class InstanceHead(Module):
    """Learned queries decoded into object features and per-pixel mask logits."""

    def __init__(self, init: ParamInit, d: int, n_queries: int, n_layers: int = 3):
        self.queries = init.normal((n_queries, d), 1.0)
        self.decoder = Decoder(init, d, n_layers)
        self.mask_embed = MLP(init, d, d, d)

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]

    def __call__(self, mem, pix):
        """``mem``/``pix``: ``[B, HW, d]`` -> ``(H_o [B, N, d], mask_logits [B, N, HW])``."""
        b = mem.shape[0]
        q = ops.add(Tensor._wrap(np.zeros((b,) + self.queries.shape)), self.queries)
        H = self.decoder(q, mem)
        logits = ops.matmul(self.mask_embed(H), ops.swap_last(pix))
        return H, logits


class RelationHead(Module):
    """Pair queries ``proj([q_i; q_j])`` decoded against the feature map."""

    def __init__(self, init: ParamInit, d: int, n_layers: int = 3):
        self.pair_proj = Linear(init, 2 * d, d)
        self.decoder = Decoder(init, d, n_layers)

    def pair_queries(self, Q, pairs: np.ndarray):
        """``Q [B, N, d]``, ``pairs [M, 2]`` (shared across the batch) -> ``[B, M, d]``."""
        sub = ops.take(Q, pairs[:, 0], axis=-2)
        obj = ops.take(Q, pairs[:, 1], axis=-2)
        return self.pair_proj(ops.concat([sub, obj], axis=-1))

    def __call__(self, Q, pairs: np.ndarray, mem):
        return self.decoder(self.pair_queries(Q, pairs), mem)
