from .classify import fuse_log, fuse_scores, fused_log_probs, mask_pool, pair_mask_pool, pool_batch, prompt_classify, prompt_logits
from .decoder import Decoder, DecoderLayer, InstanceHead, RelationHead, grid_positional_encoding
from .inference import Detection, TripletPrediction, detections, predict_triplets
from .loss import Assignment, LossConfig, SceneTarget, match_predictions, relation_targets, total_loss
from .matching import bce_cost, dice_cost, hungarian_match, mask_iou_matrix
from .model import HeadConfig, HeadOutput, SpadeHead, all_pairs

__all__ = [
    "Assignment",
    "Decoder",
    "DecoderLayer",
    "Detection",
    "HeadConfig",
    "HeadOutput",
    "InstanceHead",
    "LossConfig",
    "RelationHead",
    "SceneTarget",
    "SpadeHead",
    "TripletPrediction",
    "all_pairs",
    "bce_cost",
    "detections",
    "dice_cost",
    "fuse_log",
    "fuse_scores",
    "fused_log_probs",
    "grid_positional_encoding",
    "hungarian_match",
    "mask_iou_matrix",
    "mask_pool",
    "match_predictions",
    "pair_mask_pool",
    "pool_batch",
    "predict_triplets",
    "prompt_classify",
    "prompt_logits",
    "relation_targets",
    "total_loss",
]
