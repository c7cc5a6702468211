"""Turn head outputs into ranked triplet predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..evaluation.metrics import TripletPrediction
from .model import HeadOutput


@dataclass
class Detection:
    query: int
    label: int
    confidence: float
    mask: np.ndarray  # [H, W] bool


def detections(out: HeadOutput, s: int, height: int, width: int) -> list[Detection]:
    """Queries with a non-empty mask whose best class is not "no object"."""
    probs = np.exp(out.obj_logp.data[s])
    dets = []
    for i in range(probs.shape[0]):
        best = int(np.argmax(probs[i]))
        if best == probs.shape[1] - 1 or not out.masks[s, i].any():
            continue
        dets.append(Detection(i, best, float(probs[i, best]), out.masks[s, i].reshape(height, width)))
    return dets


def predict_triplets(out: HeadOutput, s: int, height: int, width: int, eta: float, top_k: int = 100) -> list[TripletPrediction]:
    """Every predicate of every selected detected pair, scored ``conf_s * conf_o * P_r[p]``.

    Sorted by descending score with ties kept in generation order.
    """
    dets = {d.query: d for d in detections(out, s, height, width)}
    if out.rel_logp is None or len(dets) < 2:
        return []
    rel = np.exp(out.rel_logp.data[s])
    n_pred = rel.shape[1] - 1
    preds = []
    for k, (i, j) in enumerate(out.pairs):
        if i not in dets or j not in dets or not out.S[s, i, j] > eta:
            continue
        ds, do = dets[i], dets[j]
        for p in range(n_pred):
            preds.append(TripletPrediction(ds.mask, do.mask, ds.label, do.label, p, ds.confidence * do.confidence * float(rel[k, p])))
    order = sorted(range(len(preds)), key=lambda t: -preds[t].score)
    return [preds[t] for t in order[:top_k]]
