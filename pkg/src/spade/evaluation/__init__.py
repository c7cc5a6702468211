from .io import ingest, load_predictions, load_split, save_predictions, triplet_from_json, triplet_to_json
from .metrics import IOU_THRESHOLD, RecallResult, TripletPrediction, aggregate, mask_iou, match_triplet, rank, recall_at_k, scene_hits
from .report import DEFAULT_KS, NO_INSTANCES, NO_SPLIT, SECTIONS, MetricsReport, split_report

__all__ = [
    "DEFAULT_KS",
    "IOU_THRESHOLD",
    "MetricsReport",
    "NO_INSTANCES",
    "NO_SPLIT",
    "RecallResult",
    "SECTIONS",
    "TripletPrediction",
    "aggregate",
    "ingest",
    "load_predictions",
    "load_split",
    "mask_iou",
    "match_triplet",
    "rank",
    "recall_at_k",
    "save_predictions",
    "scene_hits",
    "split_report",
    "triplet_from_json",
    "triplet_to_json",
]
