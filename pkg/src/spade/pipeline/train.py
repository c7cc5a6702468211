"""Second-stage training of the scene-graph head on frozen features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError
from ..head import LossConfig, SceneTarget, SpadeHead, predict_triplets, total_loss
from ..tensor import backward, no_grad
from ..tensor.optim import make_optimizer, step_decay

log = logging.getLogger(__name__)


@dataclass
class FeatureSet:
    """Cached per-scene inputs of the head."""

    features: np.ndarray  # [n, HW, feature_dim] diffusion features at t = 0
    clip: np.ndarray  # [n, HW, d] frozen image-encoder pixel features
    scenes: list

    def __len__(self) -> int:
        return len(self.scenes)


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)

    def curve(self, key: str = "total") -> list[float]:
        return [e[key] for e in self.epochs]


def train_head(
    head: SpadeHead,
    data: FeatureSet,
    epochs: int,
    batch_size: int = 16,
    lr: float = 1e-3,
    loss_cfg: LossConfig = LossConfig(),
    optimizer: str = "adam",
    drop_at: float = 0.75,
    seed: int = 0,
    obj_allowed=None,
    rel_allowed=None,
    on_epoch: Callable[[int], None] | None = None,
) -> TrainHistory:
    """Minibatch training with a single step-decay drop of the learning rate.

    ``on_epoch`` runs after every epoch (used for frozen-group checksums).
    """
    params = head.trainable()
    opt = make_optimizer(optimizer, params, lr)
    targets = [SceneTarget.from_scene(sc) for sc in data.scenes]
    rng = np.random.default_rng(seed)
    n = len(data)
    hist = TrainHistory()
    for ep in range(epochs):
        opt.lr = step_decay(lr, ep, epochs, drop_at)
        perm = rng.permutation(n)
        sums: dict[str, float] = {}
        for start in range(0, n, batch_size):
            idx = np.sort(perm[start : start + batch_size])
            opt.zero_grad()
            out = head(data.features[idx], data.clip[idx], obj_allowed, rel_allowed)
            loss, parts, _ = total_loss(out, [targets[i] for i in idx], loss_cfg, head.cfg.eta)
            if not np.isfinite(parts["total"]):
                raise NumericError(f"stage-2 loss became non-finite in epoch {ep}: {parts}")
            backward(loss)
            opt.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        record = {"epoch": ep, "lr": opt.lr, **{k: v / n for k, v in sums.items()}}
        hist.epochs.append(record)
        log.info("epoch %d %s", ep, {k: round(v, 4) for k, v in record.items()})
        if on_epoch is not None:
            on_epoch(ep)
    opt.zero_grad()
    return hist


def predict(head: SpadeHead, data: FeatureSet, top_k: int = 100, batch_size: int = 50, obj_allowed=None, rel_allowed=None):
    """Ranked triplet predictions per scene."""
    h, w = data.scenes[0].height, data.scenes[0].width
    preds = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            out = head(data.features[sl], data.clip[sl], obj_allowed, rel_allowed)
            for s in range(out.masks.shape[0]):
                preds.append(predict_triplets(out, s, h, w, head.cfg.eta, top_k))
    return preds
