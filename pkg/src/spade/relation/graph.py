"""Spatial-semantic adjacency over object proposals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ContractError


@dataclass
class AdjacencyGraph:
    G: np.ndarray

    def __post_init__(self):
        G = self.G
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ContractError(f"adjacency must be square, got {G.shape}")
        if not np.array_equal(G, G.T) or np.any(np.diag(G)) or not np.isin(G, (0, 1)).all():
            raise ContractError("adjacency must be binary, symmetric, zero-diagonal")

    @property
    def N(self) -> int:
        return self.G.shape[0]

    def neighbors(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.G[r])

    def non_neighbors(self, r: int) -> np.ndarray:
        return np.array([j for j in range(self.N) if j != r and not self.G[r, j]], dtype=int)


def _cosine(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = features / safe[:, None]
    cos = u @ u.T
    cos[norms == 0, :] = 0.0
    cos[:, norms == 0] = 0.0
    return cos


def spatial_adjacency(masks, radius: int = 1) -> np.ndarray:
    """1 where two masks overlap once each is dilated by ``radius`` pixels (8-connected)."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if radius > 0:
        struct = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        masks = [ndimage.binary_dilation(m, structure=struct) for m in masks]
    flat = np.stack([m.reshape(-1) for m in masks]).astype(np.int64)
    return (flat @ flat.T > 0).astype(np.int8)


def build_graph(masks, features, sem_threshold: float = 0.5, radius: int = 1) -> AdjacencyGraph:
    """``G = min(spatial + semantic, 1)`` with the diagonal cleared.

    Proposals with empty masks get no spatial edges; zero feature rows get
    no semantic edges (cosine treated as 0).
    """
    features = np.asarray(getattr(features, "data", features), dtype=np.float64)
    n = len(masks)
    if n < 1 or features.shape[0] != n:
        raise ContractError(f"build_graph: {n} masks vs {features.shape[0]} feature rows")
    spatial = spatial_adjacency(masks, radius)
    semantic = (_cosine(features) > sem_threshold).astype(np.int8)
    G = np.minimum(spatial + semantic, 1).astype(np.int8)
    np.fill_diagonal(G, 0)
    return AdjacencyGraph(G)
