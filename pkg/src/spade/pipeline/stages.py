"""Building blocks shared by the CLI commands."""

from __future__ import annotations

import logging

import numpy as np

from ..calibration import (
    CalibrationResult,
    Student,
    ToyImageEncoder,
    ToyTextEncoder,
    base_checksums,
    build_student,
    calibrate,
    collect_teacher_maps,
)
from ..diffusion import UNetConfig, UNetLite, default_schedule
from ..head import HeadConfig, LossConfig, SpadeHead
from ..relation import RgtConfig
from ..scenes import PREDICATES, SceneConfig, VocabSplit, category_signatures, filter_train, generate_scenes, make_split
from ..tensor import no_grad
from .config import RunConfig
from .train import FeatureSet

log = logging.getLogger(__name__)

N_PREDICATES = len(PREDICATES)


def scene_config(cfg: RunConfig) -> SceneConfig:
    d = cfg.data
    return SceneConfig(n_objects=tuple(d.n_objects), n_object_classes=d.n_object_classes, noise_sigma=d.noise_sigma)


def generate_corpus(cfg: RunConfig):
    """``(train, test, split)``; train and test use disjoint child-seed streams."""
    d = cfg.data
    sc = scene_config(cfg)
    train = generate_scenes(d.n_train, seed=2 * d.seed + 1, config=sc, balance_bands=d.balance_bands, prefix="train")
    test = generate_scenes(d.n_test, seed=2 * d.seed + 2, config=sc, balance_bands=d.balance_bands, prefix="test")
    split = make_split(d.n_object_classes, N_PREDICATES, d.split_seed)
    return train, test, split


def unet_config(cfg: RunConfig) -> UNetConfig:
    df = cfg.diffusion
    return UNetConfig(widths=tuple(df.widths), d_cond=cfg.model.d, d_att=df.d_att, n_temb=df.n_temb, train_steps=df.train_steps)


class Frozen:
    """Seeded frozen components: teacher denoiser, image encoder, text vocabulary."""

    def __init__(self, cfg: RunConfig):
        m = cfg.model
        self.teacher = UNetLite(unet_config(cfg), seed=cfg.diffusion.teacher_seed).freeze()
        self.encoder = ToyImageEncoder(3, m.d, seed=m.encoder_seed)
        sig = category_signatures(cfg.data.n_object_classes, 3, SceneConfig().signature_seed)
        # object prompts live in the image encoder's space, as if jointly trained
        self.vocab = ToyTextEncoder(cfg.data.n_object_classes, N_PREDICATES, m.d, seed=m.text_seed, object_vectors=self.encoder.embed_colors(sig))
        self.schedule = default_schedule(cfg.diffusion.steps, cfg.diffusion.train_steps)


def make_student(cfg: RunConfig, frozen: Frozen) -> Student:
    c = cfg.calibration
    lora = c.enabled and c.lora
    return build_student(frozen.teacher, frozen.encoder, c.n_tok, lora=lora, rank=c.rank, seed=cfg.seed + 10, adapter_hidden=c.adapter_hidden)


def run_calibration(cfg: RunConfig, frozen: Frozen, student: Student, scenes) -> CalibrationResult:
    c = cfg.calibration
    subset = scenes[: c.n_scenes]
    maps = collect_teacher_maps(subset, frozen.teacher, frozen.vocab, c.n_tok, frozen.schedule, c.teacher_step, c.inversion, seed=cfg.seed)
    grids = np.stack([sc.grid for sc in subset])
    before = base_checksums(student) if student.lora else None
    result = calibrate(student, grids, maps, c.steps, c.lr, c.lambda_cal, optimizer=c.optimizer, seed=cfg.seed)
    if before is not None and base_checksums(student) != before:
        raise RuntimeError("calibration modified frozen base weights")
    return result


def extract_features(cfg: RunConfig, frozen: Frozen, student: Student, scenes, batch_size: int = 50) -> FeatureSet:
    """Student features at ``t = feature_t`` plus frozen encoder pixel features."""
    feats = []
    with no_grad():
        for start in range(0, len(scenes), batch_size):
            grids = np.stack([sc.grid for sc in scenes[start : start + batch_size]])
            _, _, pyramid = student(grids, cfg.diffusion.feature_t)
            feats.append(pyramid.features.data)
    grids = np.stack([sc.grid for sc in scenes])
    return FeatureSet(np.concatenate(feats), frozen.encoder.pixel_features(grids), list(scenes))


def head_config(cfg: RunConfig) -> HeadConfig:
    m = cfg.model
    rgt = RgtConfig(d=m.d, n_blocks=m.rgt_blocks, mode=m.rgt_mode, neighbor_context=m.lcnl, non_neighbor_context=m.lcnnl, local_context=m.lcl)
    return HeadConfig(
        d=m.d,
        n_queries=m.n_queries,
        n_layers=m.n_layers,
        feature_dim=sum(cfg.diffusion.widths),
        alpha=m.alpha,
        eta=m.eta,
        sem_threshold=m.sem_threshold,
        graph_radius=m.graph_radius,
        tau_init=m.tau_init,
        ov_mode=m.ov_mode,
        memory_pool=m.memory_pool,
        rgt=rgt,
    )


def loss_config(cfg: RunConfig) -> LossConfig:
    t = cfg.train
    return LossConfig(
        lambda_rqc=t.lambda_rqc if t.rqc else 0.0,
        lambda_mask=t.lambda_mask,
        no_object_weight=t.no_object_weight,
        rel_supervision=t.rel_supervision,
        rqc_balance=t.rqc_balance,
        psi_assignment=t.psi_assignment,
    )


def make_head(cfg: RunConfig, frozen: Frozen) -> SpadeHead:
    sc = scene_config(cfg)
    return SpadeHead(head_config(cfg), frozen.vocab.objects, frozen.vocab.predicates, sc.height, sc.width, seed=cfg.seed)


def allowed_classes(cfg: RunConfig, split: VocabSplit | None, training: bool):
    """Vocabulary masks: open-vocabulary training only sees base classes."""
    mode = cfg.data.split_mode
    if not training or mode == "closed" or split is None:
        return None, None
    rel = np.isin(np.arange(N_PREDICATES), split.base_predicates)
    obj = np.isin(np.arange(cfg.data.n_object_classes), split.base_objects) if mode == "OvD+R" else None
    return obj, rel


def training_scenes(cfg: RunConfig, train, split):
    return filter_train(train, split, cfg.data.split_mode)
