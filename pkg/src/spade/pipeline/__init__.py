from .bundle import ModelBundle, group_checksum, head_groups, student_groups
from .commands import (
    Corpus,
    Model,
    calibrate_cmd,
    eval_cmd,
    evaluate,
    gen_data,
    inspect_cmd,
    inspect_scene,
    load_corpus,
    load_model,
    load_student,
    model_from_bundle,
    model_name,
    train_cmd,
)
from .config import STAGE_KEYS, CalibrationConfig, DataConfig, DiffusionConfig, EvalConfig, ModelConfig, RunConfig, TrainConfig
from .train import FeatureSet, TrainHistory, predict, train_head

__all__ = [
    "STAGE_KEYS",
    "CalibrationConfig",
    "Corpus",
    "DataConfig",
    "DiffusionConfig",
    "EvalConfig",
    "FeatureSet",
    "Model",
    "ModelBundle",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "TrainHistory",
    "calibrate_cmd",
    "eval_cmd",
    "evaluate",
    "gen_data",
    "group_checksum",
    "head_groups",
    "inspect_cmd",
    "inspect_scene",
    "load_corpus",
    "load_model",
    "load_student",
    "model_from_bundle",
    "model_name",
    "predict",
    "student_groups",
    "train_cmd",
    "train_head",
]
