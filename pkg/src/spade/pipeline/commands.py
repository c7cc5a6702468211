"""Pipeline stages over a run directory.

Layout of a run directory::

    config.json                      config the directory was created with
    data/train.jsonl, data/test.jsonl, data/dataset.meta.json
    calibration.spade/.json          calibrated student (+ calibration_curve.json)
    model-<hash>.spade/.json         full checkpoint of one stage-2 configuration
    history-<hash>.json              stage-2 loss curves
    eval-<hash>/                     metrics.json, predictions.jsonl, report.txt
    inspect-<hash>/<scene>.json      graph / attention / pair-selection dumps

``<hash>`` is the full config hash, so ablation variants can share the
data and calibration of one run directory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calibration import Student
from ..diffusion import UNetLite
from ..errors import ConfigError, ContractError, MissingArtifactError
from ..evaluation import save_predictions, split_report
from ..relation import branch_masks
from ..scenes import OBJECT_NAMES, PREDICATES, VocabSplit, load_dataset, load_meta, save_dataset, save_meta
from ..scenes import rle
from ..tensor import Tensor, no_grad
from .bundle import ModelBundle, group_checksum, head_groups, load_into, student_groups
from .config import STAGE_KEYS, RunConfig
from .stages import (
    Frozen,
    allowed_classes,
    extract_features,
    generate_corpus,
    loss_config,
    make_head,
    make_student,
    run_calibration,
    scene_config,
    training_scenes,
    unet_config,
)
from .train import predict, train_head

log = logging.getLogger(__name__)

DATA_DIR = "data"
CALIBRATION = "calibration"
STUDENT_GROUPS = ("teacher", "student_base", "lora", "adapter")


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def model_name(cfg: RunConfig) -> str:
    return f"model-{cfg.hash()}"


# data


def gen_data(cfg: RunConfig, run_dir) -> Path:
    out = Path(run_dir) / DATA_DIR
    out.mkdir(parents=True, exist_ok=True)
    train, test, split = generate_corpus(cfg)
    save_dataset(train, out / "train.jsonl")
    save_dataset(test, out / "test.jsonl")
    d = cfg.data
    meta = {
        "seed": d.seed,
        "config_hash": cfg.hash(STAGE_KEYS["data"]),
        "data_config": cfg.to_dict()["data"],
        "generator": scene_config(cfg).to_dict(),
        "objects": list(OBJECT_NAMES[: d.n_object_classes]),
        "predicates": list(PREDICATES),
        "split": split.to_dict(),
        "n_train": len(train),
        "n_test": len(test),
    }
    save_meta(out, meta)
    log.info("wrote %d train / %d test scenes to %s", len(train), len(test), out)
    return out


@dataclass
class Corpus:
    train: list
    test: list
    split: VocabSplit


def load_corpus(cfg: RunConfig, run_dir) -> Corpus:
    data = Path(run_dir) / DATA_DIR
    if not (data / "dataset.meta.json").exists():
        raise MissingArtifactError(f"no dataset in {data}; run `spade gen-data --run-dir {run_dir}` first")
    meta = load_meta(data)
    want = cfg.hash(STAGE_KEYS["data"])
    if meta.get("config_hash") != want:
        raise ConfigError(f"dataset in {data} was generated with data config {meta.get('config_hash')}, current is {want}")
    return Corpus(load_dataset(data / "train.jsonl"), load_dataset(data / "test.jsonl"), VocabSplit.from_dict(meta["split"]))


# calibration


def _student_bundle(cfg: RunConfig, frozen: Frozen, student: Student, extra: dict) -> ModelBundle:
    groups = {"teacher": frozen.teacher.state_dict(), **student_groups(student)}
    flags = {"teacher": True, "student_base": True, "lora": False, "adapter": False}
    return ModelBundle(cfg, groups, flags, STAGE_KEYS["calibration"], extra)


def calibrate_cmd(cfg: RunConfig, run_dir) -> Path:
    if not cfg.calibration.enabled:
        raise ConfigError("calibration is disabled in this config (--no-calibration); nothing to calibrate")
    corpus = load_corpus(cfg, run_dir)
    frozen = Frozen(cfg)
    student = make_student(cfg, frozen)
    result = run_calibration(cfg, frozen, student, corpus.train)
    log.info("calibration loss %.6f -> %.6f over %d steps", result.initial, result.final, result.steps)
    run_dir = Path(run_dir)
    _write_json(run_dir / "calibration_curve.json", {"config_hash": cfg.hash(STAGE_KEYS["calibration"]), "losses": result.losses})
    bundle = _student_bundle(cfg, frozen, student, {"initial_loss": result.initial, "final_loss": result.final})
    return bundle.save(run_dir, CALIBRATION)


def restore_student(cfg: RunConfig, frozen: Frozen, groups: dict) -> Student:
    student = make_student(cfg, frozen)
    load_into(student.unet, groups["student_base"], groups["lora"])
    student.captioner.load_state_dict(groups["adapter"])
    student.freeze()
    return student


def load_student(cfg: RunConfig, frozen: Frozen, run_dir, allow_mismatch: bool = False) -> Student:
    """Calibrated student from the run directory, or the raw seeded UNet without calibration."""
    if not cfg.calibration.enabled:
        return make_student(cfg, frozen).freeze()
    bundle = ModelBundle.load(run_dir, CALIBRATION, cfg, allow_mismatch, hint=f"spade calibrate --run-dir {run_dir}")
    if group_checksum(bundle.groups["teacher"]) != group_checksum(frozen.teacher.state_dict()) and not allow_mismatch:
        raise ConfigError("calibration checkpoint was built against a different teacher")
    return restore_student(cfg, frozen, bundle.groups)


# stage-2 training


def train_cmd(cfg: RunConfig, run_dir, allow_mismatch: bool = False) -> Path:
    run_dir = Path(run_dir)
    corpus = load_corpus(cfg, run_dir)
    frozen = Frozen(cfg)
    student = load_student(cfg, frozen, run_dir, allow_mismatch)
    train_scenes = training_scenes(cfg, corpus.train, corpus.split)
    feats = extract_features(cfg, frozen, student, train_scenes)
    head = make_head(cfg, frozen)
    obj_allowed, rel_allowed = allowed_classes(cfg, corpus.split, training=True)

    frozen_groups = {"teacher": frozen.teacher.state_dict(), **student_groups(student)}
    reference = {g: group_checksum(t) for g, t in frozen_groups.items()}

    def check_frozen(epoch: int) -> None:
        now = {"teacher": frozen.teacher.state_dict(), **student_groups(student)}
        for g, t in now.items():
            if group_checksum(t) != reference[g]:
                raise ContractError(f"frozen group {g!r} changed during stage-2 epoch {epoch}")

    t = cfg.train
    hist = train_head(
        head,
        feats,
        t.epochs,
        batch_size=t.batch_size,
        lr=t.lr,
        loss_cfg=loss_config(cfg),
        optimizer=t.optimizer,
        drop_at=t.drop_at,
        seed=cfg.seed,
        obj_allowed=obj_allowed,
        rel_allowed=rel_allowed,
        on_epoch=check_frozen,
    )
    name = model_name(cfg)
    _write_json(run_dir / f"history-{cfg.hash()}.json", {"config_hash": cfg.hash(), "epochs": hist.epochs})
    groups = {**frozen_groups, **head_groups(head)}
    flags = {g: g in STUDENT_GROUPS for g in groups}
    return ModelBundle(cfg, groups, flags, None, {"n_train_scenes": len(train_scenes)}).save(run_dir, name)


@dataclass
class Model:
    cfg: RunConfig
    frozen: Frozen
    student: Student
    head: object


def load_model(cfg: RunConfig, run_dir, allow_mismatch: bool = False) -> Model:
    name = model_name(cfg)
    bundle = ModelBundle.load(run_dir, name, cfg, allow_mismatch, hint=f"spade train --run-dir {run_dir} (same flags)")
    cfg = bundle.cfg if allow_mismatch else cfg
    return model_from_bundle(cfg, bundle)


def model_from_bundle(cfg: RunConfig, bundle: ModelBundle) -> Model:
    frozen = Frozen(cfg)
    frozen.teacher = UNetLite(unet_config(cfg), seed=cfg.diffusion.teacher_seed)
    frozen.teacher.load_state_dict(bundle.groups["teacher"])
    frozen.teacher.freeze()
    student = restore_student(cfg, frozen, bundle.groups)
    head = make_head(cfg, frozen)
    prompts = dict(bundle.groups["prompts"])
    obj_bank, rel_bank = prompts.pop("object_bank"), prompts.pop("predicate_bank")
    if not (np.array_equal(obj_bank, head._obj_bank) and np.array_equal(rel_bank, head._rel_bank)):
        raise ConfigError("prompt banks in checkpoint differ from the configured text encoder")
    load_into(head, bundle.groups["rgt"], bundle.groups["decoders"], prompts)
    head.freeze()
    return Model(cfg, frozen, student, head)


# evaluation


def evaluate(model: Model, scenes, split: VocabSplit | None):
    cfg = model.cfg
    feats = extract_features(cfg, model.frozen, model.student, scenes)
    preds = predict(model.head, feats, top_k=cfg.eval.top_k)
    report_split = None if cfg.data.split_mode == "closed" else split
    return preds, split_report(preds, scenes, report_split, cfg.eval.ks)


def eval_cmd(cfg: RunConfig, run_dir, allow_mismatch: bool = False) -> Path:
    run_dir = Path(run_dir)
    corpus = load_corpus(cfg, run_dir)
    model = load_model(cfg, run_dir, allow_mismatch)
    preds, report = evaluate(model, corpus.test, corpus.split)
    out = run_dir / f"eval-{cfg.hash()}"
    out.mkdir(parents=True, exist_ok=True)
    save_predictions(out / "predictions.jsonl", [sc.scene_id for sc in corpus.test], preds)
    metrics = {"config": model.cfg.to_dict(), "config_hash": model.cfg.hash(), "seed": model.cfg.seed, "report": report.to_dict()}
    _write_json(out / "metrics.json", metrics)
    (out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    return out


# inspection


def inspect_scene(model: Model, scene) -> dict:
    """Graph, per-block set-attention maps, similarity and pair selection for one scene."""
    cfg = model.cfg
    feats = extract_features(cfg, model.frozen, model.student, [scene])
    head = model.head
    with no_grad():
        out = head(feats.features, feats.clip)
        G = out.G[0]
        plus, minus = branch_masks(G)
        x = Tensor(out.H_o.data[0])
        attention = []
        for k, block in enumerate(head.rgt.blocks):
            entry = {"block": k}
            if block._cfg.neighbor_context:
                entry["neighbor"] = block.pos.attention(x, plus).tolist()
            if block._cfg.non_neighbor_context:
                entry["non_neighbor"] = block.neg.attention(x, minus).tolist()
            attention.append(entry)
            x = block(x, G)
    probs = np.exp(out.obj_logp.data[0])
    eta = head.cfg.eta
    S = out.S[0]
    queries = [
        {
            "query": i,
            "label": int(probs[i].argmax()),
            "label_name": "no object" if probs[i].argmax() == head.n_objects else OBJECT_NAMES[int(probs[i].argmax())],
            "confidence": float(probs[i].max()),
            "mask": rle.encode(out.masks[0, i].reshape(scene.height, scene.width)),
        }
        for i in range(out.masks.shape[1])
    ]
    selected = [[int(i), int(j)] for i, j in out.pairs if S[i, j] > eta]
    return {
        "scene_id": scene.scene_id,
        "config_hash": cfg.hash(),
        "queries": queries,
        "graph": G.astype(int).tolist(),
        "similarity": S.tolist(),
        "eta": eta,
        "selected_pairs": selected,
        "attention": attention,
    }


def inspect_cmd(cfg: RunConfig, run_dir, scene_id: str, allow_mismatch: bool = False) -> Path:
    run_dir = Path(run_dir)
    corpus = load_corpus(cfg, run_dir)
    by_id = {sc.scene_id: sc for sc in corpus.train + corpus.test}
    if scene_id not in by_id:
        raise ContractError(f"unknown scene id {scene_id!r}")
    model = load_model(cfg, run_dir, allow_mismatch)
    dump = inspect_scene(model, by_id[scene_id])
    return _write_json(run_dir / f"inspect-{cfg.hash()}" / f"{scene_id}.json", dump)
