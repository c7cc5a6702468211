"""Prompt classifiers, mask pooling and geometric-mean score fusion."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..tensor import Tensor, ops

NEG = -1e4  # additive logit penalty for classes outside the active vocabulary


def prompt_logits(H, bank, tau, allowed: np.ndarray | None = None) -> Tensor:
    """``tau * cos(H_i, E_c)``, with disallowed classes pushed to ``NEG``."""
    bank = bank if isinstance(bank, Tensor) else Tensor._wrap(np.asarray(bank, dtype=np.float64))
    if bank.shape[0] < 1:
        raise ContractError("prompt bank is empty")
    cos = ops.cosine_matrix(H, bank)
    logits = ops.mul(cos, tau) if isinstance(tau, Tensor) else ops.scale(cos, float(tau))
    if allowed is not None:
        pen = np.where(np.asarray(allowed, dtype=bool), 0.0, NEG)
        logits = ops.add(logits, Tensor._wrap(np.broadcast_to(pen, logits.shape).copy()))
    return logits


def prompt_classify(H, bank, tau, allowed: np.ndarray | None = None) -> Tensor:
    """Row distributions ``softmax_c(tau * cos(H_i, E_c))``."""
    return ops.softmax(prompt_logits(H, bank, tau, allowed), axis=-1)


def mask_pool(features, mask, ids=None) -> np.ndarray:
    """Mean of ``features[HW, d]`` over the pixels of ``mask``."""
    f = np.asarray(getattr(features, "data", features), dtype=np.float64)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ContractError(f"mask_pool: empty pooling region{'' if ids is None else f' for {ids}'}")
    return f[m].mean(axis=0)


def pair_mask_pool(features, m_s, m_o, ids=None) -> np.ndarray:
    """Pool over the union of subject and object masks (addition clamped to 1)."""
    union = np.minimum(np.asarray(m_s, dtype=np.int64) + np.asarray(m_o, dtype=np.int64), 1).astype(bool)
    return mask_pool(features, union, ids)


def pool_batch(features: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched pooling: ``features[..., HW, d]``, ``masks[..., K, HW]`` -> ``([..., K, d], nonempty[..., K])``."""
    m = np.asarray(masks, dtype=np.float64)
    count = m.sum(axis=-1, keepdims=True)
    pooled = (m / np.maximum(count, 1.0)) @ features
    return pooled, count[..., 0] > 0


def fuse_scores(P, P_prime, alpha: float) -> Tensor:
    """Renormalized ``P**alpha * P_prime**(1 - alpha)`` for strictly positive rows.

    Computed as ``softmax(alpha log P + (1 - alpha) log P')``; at the
    endpoints the selected input is returned untouched since it is already a
    distribution.
    """
    P = P if isinstance(P, Tensor) else Tensor(P)
    P_prime = P_prime if isinstance(P_prime, Tensor) else Tensor(P_prime)
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"fusion weight alpha must lie in [0, 1], got {alpha}")
    if P.shape != P_prime.shape:
        raise ContractError(f"fuse_scores: widths differ {P.shape} vs {P_prime.shape}")
    if (P.data <= 0).any() or (P_prime.data <= 0).any():
        raise ContractError("fuse_scores: inputs must be strictly positive (apply the floor upstream)")
    if alpha == 1.0:
        return P
    if alpha == 0.0:
        return P_prime
    return fuse_log(ops.log(P), ops.log(P_prime), alpha)


def fuse_log(logp, logp_prime, alpha: float, allowed: np.ndarray | None = None) -> Tensor:
    """Log-domain fusion: ``log_softmax(alpha logp + (1 - alpha) logp')`` as probabilities."""
    return ops.exp(fused_log_probs(logp, logp_prime, alpha, allowed))


def fused_log_probs(logp, logp_prime, alpha: float, allowed: np.ndarray | None = None) -> Tensor:
    if alpha == 1.0:
        z = logp
    elif alpha == 0.0:
        z = logp_prime
    else:
        z = ops.add(ops.scale(logp, alpha), ops.scale(logp_prime, 1.0 - alpha))
    if allowed is not None:
        pen = np.where(np.asarray(allowed, dtype=bool), 0.0, NEG)
        z = ops.add(z, Tensor._wrap(np.broadcast_to(pen, z.shape).copy()))
    return ops.log_softmax(z, axis=-1)
