from .calibrate import (
    CalibrationResult,
    Student,
    base_checksums,
    build_student,
    calibrate,
    calibration_loss,
    collect_teacher_maps,
    prompt_conditioning,
    teacher_attention,
)
from .captioner import ImplicitCaptioner, ToyImageEncoder
from .lora import LoraLayer, apply_lora, kv_weights, lora_layers
from .prompts import ToyTextEncoder, build_prompt_tokens, fit_length

__all__ = [
    "CalibrationResult",
    "ImplicitCaptioner",
    "LoraLayer",
    "Student",
    "ToyImageEncoder",
    "ToyTextEncoder",
    "apply_lora",
    "base_checksums",
    "build_prompt_tokens",
    "build_student",
    "calibrate",
    "calibration_loss",
    "collect_teacher_maps",
    "fit_length",
    "kv_weights",
    "lora_layers",
    "prompt_conditioning",
    "teacher_attention",
]
