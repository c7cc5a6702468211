"""SGDET-style triplet matching and recall at K.

A predicted triplet matches a ground-truth triplet when all three labels agree
and both the subject and the object masks reach IoU >= 0.5 (inclusive)
against the ground-truth masks.  A ground-truth triplet is recalled when at
least one of the top-K predictions of its scene matches it, so every GT
triplet earns at most one credit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError

IOU_THRESHOLD = 0.5


@dataclass
class TripletPrediction:
    subject_mask: np.ndarray  # [H, W] bool
    object_mask: np.ndarray
    subject_label: int
    object_label: int
    predicate_label: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ContractError(f"prediction score must be finite, got {self.score}")


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def match_triplet(pred: TripletPrediction, relation, scene, iou_threshold: float = IOU_THRESHOLD) -> bool:
    s, p, o = relation
    sub, obj = scene.objects[s], scene.objects[o]
    if (pred.subject_label, pred.predicate_label, pred.object_label) != (sub.category_id, p, obj.category_id):
        return False
    return mask_iou(pred.subject_mask, sub.mask) >= iou_threshold and mask_iou(pred.object_mask, obj.mask) >= iou_threshold


def rank(preds: Sequence[TripletPrediction]) -> list[TripletPrediction]:
    """Descending score; ties keep insertion order."""
    return sorted(preds, key=lambda t: -t.score)


def _iou_rows(masks: np.ndarray, gt: np.ndarray) -> np.ndarray:
    inter = masks @ gt.T
    union = masks.sum(1)[:, None] + gt.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def scene_hits(preds: Sequence[TripletPrediction], scene, k: int, iou_threshold: float = IOU_THRESHOLD) -> np.ndarray:
    """Boolean per GT relation of ``scene``: recalled by the top-``k`` predictions."""
    if k <= 0:
        raise ContractError(f"K must be positive, got {k}")
    hits = np.zeros(len(scene.relations), dtype=bool)
    top = rank(preds)[:k]
    if not top or not scene.relations:
        return hits
    gt = np.stack([o.mask.reshape(-1) for o in scene.objects]).astype(np.int64)
    for t in top:
        if t.subject_mask.shape != scene.objects[0].mask.shape or t.object_mask.shape != scene.objects[0].mask.shape:
            raise DimensionError(f"prediction mask {t.subject_mask.shape} does not match grid {scene.objects[0].mask.shape}")
    subj = np.stack([t.subject_mask.reshape(-1) for t in top]).astype(np.int64)
    obj = np.stack([t.object_mask.reshape(-1) for t in top]).astype(np.int64)
    iou_s = _iou_rows(subj, gt) >= iou_threshold
    iou_o = _iou_rows(obj, gt) >= iou_threshold
    labels = np.array([(t.subject_label, t.predicate_label, t.object_label) for t in top])
    cats = np.array([o.category_id for o in scene.objects])
    for r, (s, p, o) in enumerate(scene.relations):
        ok = iou_s[:, s] & iou_o[:, o] & (labels[:, 0] == cats[s]) & (labels[:, 1] == p) & (labels[:, 2] == cats[o])
        hits[r] = bool(ok.any())
    return hits


@dataclass
class RecallResult:
    k: int
    n_gt: int
    recall: float
    per_predicate: dict[int, float] = field(default_factory=dict)

    @property
    def mean_recall(self) -> float:
        """Unweighted mean over predicates with at least one GT instance."""
        return float(np.mean(list(self.per_predicate.values()))) if self.per_predicate else 0.0


def aggregate(hits: list[np.ndarray], scenes, k: int, keep: Callable[[int, int], bool] | None = None) -> RecallResult:
    """Pool per-scene hit vectors into corpus recall, optionally over a GT subset."""
    got: dict[int, int] = {}
    total: dict[int, int] = {}
    for i, (h, sc) in enumerate(zip(hits, scenes)):
        for r, (_, p, _) in enumerate(sc.relations):
            if keep is not None and not keep(i, r):
                continue
            total[p] = total.get(p, 0) + 1
            got[p] = got.get(p, 0) + int(h[r])
    n = sum(total.values())
    recall = sum(got.values()) / n if n else 0.0
    return RecallResult(k, n, recall, {p: got[p] / total[p] for p in sorted(total)})


def recall_at_k(predictions, scenes, k: int, iou_threshold: float = IOU_THRESHOLD, keep=None) -> RecallResult:
    """Corpus R@K and per-predicate recalls; ``predictions[i]`` belongs to ``scenes[i]``."""
    if k <= 0:
        raise ContractError(f"K must be positive, got {k}")
    if len(predictions) != len(scenes):
        raise ContractError(f"{len(predictions)} prediction lists for {len(scenes)} scenes")
    hits = [scene_hits(p, sc, k, iou_threshold) for p, sc in zip(predictions, scenes)]
    return aggregate(hits, scenes, k, keep)
