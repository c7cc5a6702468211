"""Prediction JSONL and standalone scoring.

One scene per line::

    {"id": str, "triplets": [{"subject_mask": RLE, "object_mask": RLE,
      "subject_label": int, "object_label": int, "predicate_label": int,
      "score": float}, ...]}

Triplet scores are products of the subject, object and predicate confidences.
"""

from __future__ import annotations

import json

from ..errors import FormatError
from ..scenes import VocabSplit, load_dataset, load_meta
from ..scenes import rle
from .metrics import TripletPrediction
from .report import DEFAULT_KS, MetricsReport, split_report


def triplet_to_json(t: TripletPrediction) -> dict:
    return {
        "subject_mask": rle.encode(t.subject_mask),
        "object_mask": rle.encode(t.object_mask),
        "subject_label": int(t.subject_label),
        "object_label": int(t.object_label),
        "predicate_label": int(t.predicate_label),
        # repr round-trips float64 exactly
        "score": float(t.score),
    }


def triplet_from_json(d: dict) -> TripletPrediction:
    try:
        return TripletPrediction(
            rle.decode(d["subject_mask"]),
            rle.decode(d["object_mask"]),
            int(d["subject_label"]),
            int(d["object_label"]),
            int(d["predicate_label"]),
            float(d["score"]),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed triplet: {exc!r}") from None


def save_predictions(path, scene_ids, predictions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, preds in zip(scene_ids, predictions):
            fh.write(json.dumps({"id": sid, "triplets": [triplet_to_json(t) for t in preds]}, separators=(",", ":")))
            fh.write("\n")


def load_predictions(path) -> dict[str, list[TripletPrediction]]:
    out: dict[str, list[TripletPrediction]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc.msg}", line=lineno) from None
            try:
                sid = str(record["id"])
                triplets = record["triplets"]
                if not isinstance(triplets, list):
                    raise FormatError("'triplets' must be a list")
                preds = [triplet_from_json(t) for t in triplets]
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno) from None
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}: malformed record: {exc!r}", line=lineno) from None
            if sid in out:
                raise FormatError(f"{path}: duplicate scene id {sid!r}", line=lineno)
            out[sid] = preds
    return out


def load_split(path) -> VocabSplit | None:
    """Vocabulary split from a ``dataset.meta.json`` (or its directory); ``None`` if absent."""
    meta = load_meta(path)
    return VocabSplit.from_dict(meta["split"]) if meta.get("split") else None


def ingest(pred_path, gt_path, split: VocabSplit | None = None, ks=DEFAULT_KS) -> MetricsReport:
    """Score a prediction file against a dataset file without the model.

    GT scenes absent from the predictions count as having no predictions.
    """
    scenes = load_dataset(gt_path)
    preds = load_predictions(pred_path)
    ids = {sc.scene_id for sc in scenes}
    unknown = sorted(set(preds) - ids)
    if unknown:
        raise FormatError(f"{pred_path}: scene ids not in ground truth: {unknown[:5]}")
    return split_report([preds.get(sc.scene_id, []) for sc in scenes], scenes, split, ks)
