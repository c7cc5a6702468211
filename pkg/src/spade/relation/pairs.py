"""Pair-query selection by feature similarity, and its auxiliary loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from ..tensor import Tensor, ops


@dataclass
class PairSelection:
    S: np.ndarray
    pairs: list[tuple[int, int]]
    eta: float

    @property
    def M(self) -> int:
        return len(self.pairs)


def similarity_matrix(Q) -> np.ndarray:
    Q = np.asarray(getattr(Q, "data", Q), dtype=np.float64)
    norms = np.linalg.norm(Q, axis=-1)
    if np.any(norms == 0):
        bad = np.argwhere(norms == 0).reshape(-1).tolist()
        raise ContractError(f"select_pairs: zero feature row(s) {bad}; cosine undefined")
    u = Q / norms[..., None]
    return u @ np.swapaxes(u, -1, -2)


def select_pairs(Q, eta: float = 0.65) -> PairSelection:
    """Ordered pairs ``(i, j)``, ``i != j``, with cosine ``S[i, j] > eta``.

    ``S`` is symmetric, so a pair is selected in both directions or neither.
    """
    S = similarity_matrix(Q)
    hit = S > eta
    np.fill_diagonal(hit, False)
    pairs = [(int(i), int(j)) for i, j in zip(*np.nonzero(hit))]
    return PairSelection(S, pairs, eta)


def pair_indicator(n: int, matched_gt, gt_relations) -> np.ndarray:
    """Psi'[i, j] = 1 iff proposals i and j are matched to GT objects related in either direction.

    ``matched_gt[i]`` is the GT object index of proposal ``i`` or -1.
    """
    related = {(s, o) for s, _, o in gt_relations} | {(o, s) for s, _, o in gt_relations}
    psi = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and matched_gt[i] >= 0 and matched_gt[j] >= 0 and (matched_gt[i], matched_gt[j]) in related:
                psi[i, j] = 1.0
    return psi


def rqc_loss(Q, psi, weight: np.ndarray | None = None) -> Tensor:
    """Mean squared error between the cosine matrix of ``Q`` and ``psi`` over off-diagonal entries.

    ``Q`` is ``[N, d]`` or ``[B, N, d]``; ``weight`` optionally masks entries
    further (for example, scenes without any matched proposals).
    """
    Q = Q if isinstance(Q, Tensor) else Tensor(Q)
    psi = np.asarray(psi, dtype=np.float64)
    n = Q.shape[-2]
    if psi.shape != Q.shape[:-2] + (n, n):
        raise DimensionError(f"rqc_loss: indicator {psi.shape} vs {Q.shape[:-2] + (n, n)}")
    off = np.broadcast_to(1.0 - np.eye(n), psi.shape).copy()
    if weight is not None:
        off = off * np.asarray(weight, dtype=np.float64)
    denom = off.sum()
    if denom == 0:
        return ops.scale(ops.sum(Q), 0.0)
    u = ops.normalize(Q, axis=-1)
    S = ops.matmul(u, ops.swap_last(u))
    diff = ops.sub(S, Tensor._wrap(psi))
    return ops.scale(ops.sum(ops.mul(ops.mul(diff, diff), Tensor._wrap(off))), 1.0 / denom)
