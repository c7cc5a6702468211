"""Implicit captioner: frozen toy image encoder plus a trainable adapter.

The frozen part has two heads sharing one seeded pixel projection ``E``:
a per-pixel feature map ``E(x)`` (used for mask pooling) and a global
embedding of the cell-pooled grid (fed to the adapter).  Object text
embeddings can be aligned with it through ``E(signature)``, which plays the
role of a jointly trained image/text space.
"""

from __future__ import annotations

import numpy as np

from ..tensor import Module, ParamInit, Tensor, ops
from ..tensor.nn import MLP


def cell_pool(grid: np.ndarray, cells: int) -> np.ndarray:
    """Average ``[..., C, H, W]`` over a ``cells x cells`` partition -> ``[..., C*cells*cells]``."""
    *lead, c, h, w = grid.shape
    g = grid.reshape(*lead, c, cells, h // cells, cells, w // cells).mean(axis=(-3, -1))
    return g.reshape(*lead, c * cells * cells)


class ToyImageEncoder:
    """Frozen: never exposes parameters to the optimizer."""

    def __init__(self, channels: int, dim: int, cells: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self._pix = rng.normal(0, 1 / np.sqrt(channels), size=(channels, dim))
        self._glob = rng.normal(0, 1 / np.sqrt(channels * cells * cells), size=(channels * cells * cells, dim))
        self.channels = channels
        self.dim = dim
        self.cells = cells

    def pixel_features(self, grid: np.ndarray) -> np.ndarray:
        """``[C, H, W]`` -> ``[H*W, dim]`` (batched input keeps its leading axis)."""
        grid = np.asarray(grid, dtype=np.float64)
        *lead, c, h, w = grid.shape
        flat = np.moveaxis(grid, -3, -1).reshape(*lead, h * w, c)
        return flat @ self._pix

    def embed_colors(self, colors: np.ndarray) -> np.ndarray:
        return np.asarray(colors, dtype=np.float64) @ self._pix

    def __call__(self, grid: np.ndarray) -> np.ndarray:
        return np.tanh(cell_pool(np.asarray(grid, dtype=np.float64), self.cells) @ self._glob)


class ImplicitCaptioner(Module):
    """``adapter(encoder(x))`` reshaped into ``n_tok`` conditioning tokens."""

    def __init__(self, encoder: ToyImageEncoder, n_tok: int, d_cond: int, hidden: int = 64, seed: int = 0):
        self._encoder = encoder
        self.adapter = MLP(ParamInit(seed), encoder.dim, hidden, n_tok * d_cond)
        self.n_tok = n_tok
        self.d_cond = d_cond

    @property
    def encoder(self) -> ToyImageEncoder:
        return self._encoder

    def __call__(self, grid) -> Tensor:
        emb = self._encoder(grid)
        out = self.adapter(Tensor._wrap(np.atleast_2d(emb)))
        shape = (self.n_tok, self.d_cond) if np.ndim(emb) == 1 else (emb.shape[0], self.n_tok, self.d_cond)
        return ops.reshape(out, shape)
