"""Bipartite matching of predicted instances to ground truth."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import ContractError


def hungarian_match(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment ``[(pred, gt), ...]`` sorted by prediction.

    Rectangular costs are fine; surplus predictions stay unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be 2-D, got {cost.shape}")
    if cost.size == 0:
        return []
    if not np.isfinite(cost).all():
        raise ContractError("hungarian_match: costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def dice_cost(prob: np.ndarray, target: np.ndarray) -> np.ndarray:
    """``1 - dice`` for all pairs: ``prob[P, HW]``, ``target[G, HW]`` -> ``[P, G]``."""
    inter = prob @ target.T
    denom = prob.sum(-1)[:, None] + target.sum(-1)[None, :]
    return 1.0 - (2 * inter + 1.0) / (denom + 1.0)


def bce_cost(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Mean per-pixel BCE for all pairs."""
    pos = np.logaddexp(0.0, -logits)  # -log sigmoid(z)
    neg = np.logaddexp(0.0, logits)  # -log (1 - sigmoid(z))
    return (pos @ target.T + neg @ (1 - target).T) / logits.shape[-1]


def mask_iou_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    p = pred.astype(np.float64)
    g = gt.astype(np.float64)
    inter = p @ g.T
    union = p.sum(-1)[:, None] + g.sum(-1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1.0), 0.0)
