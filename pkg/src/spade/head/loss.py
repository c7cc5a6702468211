"""Training targets and the combined objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..relation import pair_indicator, rqc_loss
from ..tensor import Tensor, ops
from .matching import bce_cost, dice_cost, hungarian_match, mask_iou_matrix
from .model import HeadOutput


@dataclass(frozen=True)
class LossConfig:
    lambda_rqc: float = 0.6
    lambda_mask: float = 1.0
    no_object_weight: float = 0.1
    positive_iou: float = 0.5
    rel_supervision: str = "selected"  # or "all"
    rqc_balance: bool = False  # weight related and unrelated pairs equally in L_rqc
    psi_assignment: str = "hungarian"  # or "overlap": best-IoU GT per proposal, many-to-one


@dataclass
class SceneTarget:
    masks: np.ndarray  # [G, HW] float
    categories: np.ndarray  # [G]
    relations: list[tuple[int, int, int]]

    @classmethod
    def from_scene(cls, scene) -> "SceneTarget":
        if scene.objects:
            masks = np.stack([o.mask.reshape(-1) for o in scene.objects]).astype(np.float64)
        else:
            masks = np.zeros((0, scene.height * scene.width))
        return cls(masks, np.array([o.category_id for o in scene.objects], dtype=int), list(scene.relations))


@dataclass
class Assignment:
    matched: np.ndarray  # [B, N] GT index or -1
    localized: np.ndarray  # [B, N] GT index if matched with IoU >= threshold else -1
    overlap: np.ndarray  # [B, N] best-IoU GT index if that IoU >= threshold else -1 (many-to-one)


def match_predictions(out: HeadOutput, targets: list[SceneTarget], positive_iou: float = 0.5) -> Assignment:
    b, n = out.masks.shape[:2]
    matched = -np.ones((b, n), dtype=int)
    localized = -np.ones((b, n), dtype=int)
    overlap = -np.ones((b, n), dtype=int)
    logits = out.mask_logits.data
    logp = out.obj_logp.data
    for s, tg in enumerate(targets):
        if not len(tg.categories):
            continue
        prob = 1.0 / (1.0 + np.exp(-logits[s]))
        cost = -logp[s][:, tg.categories] + bce_cost(logits[s], tg.masks) + dice_cost(prob, tg.masks)
        iou = mask_iou_matrix(out.masks[s], tg.masks > 0.5)
        best = iou.argmax(axis=1)
        overlap[s] = np.where(iou[np.arange(n), best] >= positive_iou, best, -1)
        for i, g in hungarian_match(cost):
            matched[s, i] = g
            if iou[i, g] >= positive_iou:
                localized[s, i] = g
    return Assignment(matched, localized, overlap)


def relation_targets(out: HeadOutput, targets: list[SceneTarget], assign: Assignment, n_predicates: int):
    """Soft predicate targets ``[B, M, R + 1]`` and positive flags ``[B, M]``."""
    pairs = out.pairs
    b, m = len(targets), len(pairs)
    T = np.zeros((b, m, n_predicates + 1))
    positive = np.zeros((b, m), dtype=bool)
    for s, tg in enumerate(targets):
        by_pair: dict[tuple[int, int], list[int]] = {}
        for gs, p, go in tg.relations:
            by_pair.setdefault((gs, go), []).append(p)
        loc = assign.localized[s]
        for k, (i, j) in enumerate(pairs):
            preds = by_pair.get((loc[i], loc[j])) if loc[i] >= 0 and loc[j] >= 0 else None
            if preds:
                T[s, k, preds] = 1.0 / len(preds)
                positive[s, k] = True
            else:
                T[s, k, n_predicates] = 1.0
    return T, positive


def balance_weights(psi: np.ndarray) -> np.ndarray:
    """Per-entry weights giving the related and unrelated off-diagonal entries equal total mass."""
    off = np.broadcast_to(1.0 - np.eye(psi.shape[-1]), psi.shape)
    pos = (psi > 0.5) & (off > 0)
    neg = (psi <= 0.5) & (off > 0)
    w = np.zeros(psi.shape)
    if pos.any():
        w[pos] = 1.0 / pos.sum()
    if neg.any():
        w[neg] = 1.0 / neg.sum()
    return w


def _weighted_mean(values: Tensor, w: np.ndarray) -> Tensor:
    total = float(w.sum())
    if total == 0:
        return ops.scale(ops.sum(values), 0.0)
    return ops.scale(ops.sum(ops.mul(values, Tensor._wrap(w))), 1.0 / total)


def mask_losses(out: HeadOutput, targets: list[SceneTarget], assign: Assignment, no_object_weight: float):
    b, n, hw = out.mask_logits.shape
    tgt = np.zeros((b, n, hw))
    w = np.zeros((b, n))
    n_cls = out.obj_logp.shape[-1]
    onehot = np.zeros((b, n, n_cls))
    cw = np.zeros((b, n))
    for s, tg in enumerate(targets):
        for i in range(n):
            g = assign.matched[s, i]
            if g >= 0:
                tgt[s, i] = tg.masks[g]
                w[s, i] = 1.0
                onehot[s, i, tg.categories[g]] = 1.0
                cw[s, i] = 1.0
            else:
                onehot[s, i, n_cls - 1] = 1.0
                cw[s, i] = no_object_weight
    bce = ops.mean(ops.binary_cross_entropy_with_logits(out.mask_logits, tgt), axis=-1)
    prob = ops.sigmoid(out.mask_logits)
    inter = ops.sum(ops.mul(prob, Tensor._wrap(tgt)), axis=-1)
    denom = ops.add(ops.sum(prob, axis=-1), Tensor._wrap(tgt.sum(-1) + 1.0))
    dice = ops.sub(Tensor._wrap(np.ones((b, n))), ops.div(ops.add(ops.scale(inter, 2.0), 1.0), denom))
    seg = _weighted_mean(ops.add(bce, dice), w)
    ce = ops.neg(ops.sum(ops.mul(out.obj_logp, Tensor._wrap(onehot)), axis=-1))
    cls = _weighted_mean(ce, cw)
    return seg, cls


def total_loss(out: HeadOutput, targets: list[SceneTarget], cfg: LossConfig = LossConfig(), eta: float | None = None):
    """``L_rel + lambda_rqc L_rqc + lambda_mask L_mask`` and a dict of components."""
    assign = match_predictions(out, targets, cfg.positive_iou)
    seg, cls = mask_losses(out, targets, assign, cfg.no_object_weight)
    l_mask = ops.add(seg, cls)

    n = out.masks.shape[1]
    owner = assign.overlap if cfg.psi_assignment == "overlap" else assign.matched
    psi = np.stack([pair_indicator(n, owner[s], tg.relations) for s, tg in enumerate(targets)])
    l_rqc = rqc_loss(out.Q_hat, psi, balance_weights(psi) if cfg.rqc_balance else None)

    if out.rel_logp is not None:
        T, positive = relation_targets(out, targets, assign, out.rel_logp.shape[-1] - 1)
        if cfg.rel_supervision == "all":
            w = np.ones(positive.shape)
        else:
            thr = 0.65 if eta is None else eta
            sim = out.S[:, out.pairs[:, 0], out.pairs[:, 1]]
            w = ((sim > thr) | positive).astype(np.float64)
        ce = ops.neg(ops.sum(ops.mul(out.rel_logp, Tensor._wrap(T)), axis=-1))
        l_rel = _weighted_mean(ce, w)
    else:
        l_rel = ops.scale(ops.sum(out.Q_hat), 0.0)

    total = ops.add(l_rel, ops.add(ops.scale(l_rqc, cfg.lambda_rqc), ops.scale(l_mask, cfg.lambda_mask)))
    parts = {"rel": l_rel.item(), "rqc": l_rqc.item(), "mask_seg": seg.item(), "mask_cls": cls.item(), "total": total.item()}
    return total, parts, assign
