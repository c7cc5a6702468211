"""Inversion-guided calibration of a student UNet against a frozen teacher."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from ..diffusion import UNetLite, ddim_invert, ddim_sample
from ..diffusion.schedule import NoiseSchedule
from ..errors import ConfigError, DimensionError, NumericError
from ..tensor import Module, Tensor, backward, no_grad, ops
from ..tensor.optim import make_optimizer
from .captioner import ImplicitCaptioner, ToyImageEncoder
from .lora import apply_lora, kv_weights, lora_layers
from .prompts import ToyTextEncoder, build_prompt_tokens, fit_length

log = logging.getLogger(__name__)

TEACHER_STEPS = ("data_end", "noise_end")


def teacher_attention(
    grid,
    teacher: UNetLite,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    step: str = "data_end",
    inversion: bool = True,
    rng: np.random.Generator | None = None,
) -> list[np.ndarray]:
    """Cross-attention maps of the teacher while regenerating ``grid``.

    The grid is inverted to its deterministic latent, then sampled back under
    the prompt; maps are read at the final (``data_end``) or first
    (``noise_end``) sampling step.  Without inversion the latent is fresh
    Gaussian noise instead.
    """
    if step not in TEACHER_STEPS:
        raise ConfigError(f"teacher step must be one of {TEACHER_STEPS}, got {step!r}")
    den = teacher.as_denoiser()
    x = np.asarray(grid, dtype=np.float64)
    if inversion:
        z, _ = ddim_invert(x, den, cond, schedule)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        z = rng.normal(size=x.shape)
    _, maps = ddim_sample(z, den, cond, schedule)
    return maps[-1] if step == "data_end" else maps[0]


def calibration_loss(A, A_teacher, lam: float = 1.0) -> Tensor:
    """``lam`` times the layer-averaged mean absolute difference of attention maps.

    Maps may carry a leading scene axis; since every scene contributes maps of
    equal size, the global mean equals the average over scenes of per-map means.
    """
    if len(A) != len(A_teacher):
        raise DimensionError(f"calibration_loss: {len(A)} student layers vs {len(A_teacher)} teacher layers")
    terms = []
    for k, (a, b) in enumerate(zip(A, A_teacher)):
        if tuple(a.shape) != tuple(np.shape(b.data if isinstance(b, Tensor) else b)):
            raise DimensionError(f"calibration_loss: layer {k} shapes {a.shape} vs {np.shape(b)}")
        terms.append(ops.mean(ops.abs(ops.sub(a, b))))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, lam / len(terms))


class Student(Module):
    """Calibrated denoiser: UNet (optionally LoRA-wrapped) conditioned by the implicit captioner."""

    def __init__(self, unet: UNetLite, captioner: ImplicitCaptioner, lora: bool):
        self.unet = unet
        self.captioner = captioner
        self.lora = lora

    def __call__(self, grid, t: float = 0.0):
        return self.unet(np.asarray(grid, dtype=np.float64), t, self.captioner(grid))

    def trainable_groups(self) -> dict[str, Tensor]:
        """Adapter plus LoRA factors, or adapter plus full key/value weights without LoRA."""
        params = {f"captioner.{k}": p for k, p in self.captioner.named_parameters()}
        for name, p in self.unet.named_parameters():
            is_lora = name.endswith(".B") or name.endswith(".D")
            is_kv = (".to_k." in name or ".to_v." in name) and name.endswith(".W")
            if (self.lora and is_lora) or (not self.lora and is_kv):
                params[f"unet.{name}"] = p
        return params

    def set_trainable(self) -> dict[str, Tensor]:
        self.freeze()
        params = self.trainable_groups()
        for p in params.values():
            p.requires_grad = True
        return params


def build_student(
    teacher: UNetLite,
    encoder: ToyImageEncoder,
    n_tok: int,
    lora: bool = True,
    rank: int = 4,
    seed: int = 0,
    adapter_hidden: int = 64,
) -> Student:
    """Student UNet starts as an exact copy of the teacher's weights."""
    unet = UNetLite(teacher.cfg, seed=seed)
    unet.load_state_dict(teacher.state_dict())
    if lora:
        apply_lora(unet, rank, seed=seed + 1)
    cap = ImplicitCaptioner(encoder, n_tok, teacher.cfg.d_cond, hidden=adapter_hidden, seed=seed + 2)
    student = Student(unet, cap, lora)
    student.set_trainable()
    return student


@dataclass
class CalibrationResult:
    losses: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def initial(self) -> float:
        return self.losses[0]

    @property
    def final(self) -> float:
        return self.losses[-1]


def prompt_conditioning(scene, vocab: ToyTextEncoder, n_tok: int) -> np.ndarray:
    return fit_length(build_prompt_tokens(scene, vocab), n_tok, vocab.pad)


def collect_teacher_maps(scenes, teacher, vocab, n_tok, schedule, step="data_end", inversion=True, seed=0):
    """Stacked per-layer teacher maps ``[n_scenes, positions, n_tok]``."""
    rng = np.random.default_rng(seed)
    per_scene = [
        teacher_attention(sc.grid, teacher, prompt_conditioning(sc, vocab, n_tok), schedule, step, inversion, rng)
        for sc in scenes
    ]
    return [np.stack([m[k] for m in per_scene]) for k in range(len(per_scene[0]))]


def calibrate(
    student: Student,
    grids: np.ndarray,
    teacher_maps: list[np.ndarray],
    steps: int,
    lr: float,
    lam: float = 1.0,
    batch_size: int | None = None,
    optimizer: str = "adam",
    seed: int = 0,
    log_every: int = 0,
) -> CalibrationResult:
    """Minimize the calibration loss over the student's trainable groups.

    ``grids`` is ``[n, C, H, W]``; ``teacher_maps[k]`` is ``[n, P_k, n_tok]``.
    ``losses[s]`` is the full-batch (or minibatch) loss evaluated before
    update ``s``; the final entry is measured after the last update.
    """
    params = student.set_trainable()
    opt = make_optimizer(optimizer, params, lr)
    n = len(grids)
    rng = np.random.default_rng(seed)
    result = CalibrationResult()

    def loss_on(idx):
        _, maps, _ = student(grids[idx], 0.0)
        return calibration_loss(maps, [Tensor._wrap(m[idx]) for m in teacher_maps], lam)

    for s in range(steps + 1):
        idx = np.arange(n) if batch_size is None or batch_size >= n else np.sort(rng.choice(n, batch_size, replace=False))
        opt.zero_grad()
        if s == steps:
            with no_grad():
                loss = loss_on(idx)
        else:
            loss = loss_on(idx)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"calibration loss became non-finite at step {s}: {value}")
        result.losses.append(value)
        if log_every and s % log_every == 0:
            log.info("calibration step %d loss %.6f", s, value)
        if s == steps:
            break
        backward(loss)
        opt.step()
    result.steps = steps
    return result


def base_checksums(student: Student) -> list[str]:
    return [hashlib.sha256(w.data.tobytes()).hexdigest() for w in kv_weights(student.unet)]


__all__ = [
    "CalibrationResult",
    "Student",
    "base_checksums",
    "build_student",
    "calibrate",
    "calibration_loss",
    "collect_teacher_maps",
    "lora_layers",
    "prompt_conditioning",
    "teacher_attention",
]
