"""Checkpoints: named parameter groups with freeze flags and a config hash.

A bundle is two files in one directory: ``<name>.spade`` (tensor container,
tensor names prefixed by group) and ``<name>.json`` (config, config hash,
and per-group freeze flag and checksum).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, MissingArtifactError
from ..tensor import Module, load_tensors, save_tensors
from .config import RunConfig

FORMAT = "spade-bundle/1"


def group_checksum(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def student_groups(student) -> dict[str, dict[str, np.ndarray]]:
    base, lora = {}, {}
    for name, p in student.unet.named_parameters():
        (lora if name.endswith(".B") or name.endswith(".D") else base)[name] = p.data
    return {"student_base": base, "lora": lora, "adapter": dict(student.captioner.state_dict())}


def head_groups(head) -> dict[str, dict[str, np.ndarray]]:
    groups: dict[str, dict[str, np.ndarray]] = {"rgt": {}, "decoders": {}, "prompts": {}}
    for name, p in head.named_parameters():
        if name.startswith("rgt."):
            groups["rgt"][name] = p.data
        elif name.split(".")[0] in ("mem_proj", "pix_proj", "instance", "relation"):
            groups["decoders"][name] = p.data
        else:
            groups["prompts"][name] = p.data
    groups["prompts"]["object_bank"] = head._obj_bank
    groups["prompts"]["predicate_bank"] = head._rel_bank
    return groups


class ModelBundle:
    def __init__(self, cfg: RunConfig, groups: dict[str, dict[str, np.ndarray]], frozen: dict[str, bool], hash_keys=None, extra=None):
        self.cfg = cfg
        self.groups = groups
        self.frozen = frozen
        self.hash_keys = tuple(hash_keys) if hash_keys else None
        self.extra = extra or {}

    @property
    def config_hash(self) -> str:
        return self.cfg.hash(self.hash_keys)

    def checksums(self) -> dict[str, str]:
        return {g: group_checksum(t) for g, t in self.groups.items()}

    def save(self, directory, name: str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        flat = {f"{g}/{k}": v for g, tensors in self.groups.items() for k, v in tensors.items()}
        save_tensors(directory / f"{name}.spade", flat)
        sidecar = {
            "format": FORMAT,
            "config": self.cfg.to_dict(),
            "config_hash": self.config_hash,
            "hash_keys": list(self.hash_keys) if self.hash_keys else None,
            "groups": {g: {"frozen": self.frozen.get(g, False), "n_tensors": len(t), "sha256": group_checksum(t)} for g, t in self.groups.items()},
            "extra": self.extra,
        }
        path = directory / f"{name}.json"
        path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory, name: str, expect: RunConfig | None = None, allow_mismatch: bool = False, hint: str = "") -> "ModelBundle":
        directory = Path(directory)
        side, blob = directory / f"{name}.json", directory / f"{name}.spade"
        if not side.exists() or not blob.exists():
            raise MissingArtifactError(f"no {name} checkpoint in {directory}" + (f"; run `{hint}` first" if hint else ""))
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{side}: invalid JSON: {exc.msg}", line=exc.lineno) from None
        if meta.get("format") != FORMAT:
            raise FormatError(f"{side}: unsupported bundle format {meta.get('format')!r}")
        cfg = RunConfig.from_dict(meta["config"])
        keys = tuple(meta["hash_keys"]) if meta.get("hash_keys") else None
        if cfg.hash(keys) != meta["config_hash"]:
            raise FormatError(f"{side}: stored config does not match its recorded hash")
        if expect is not None and expect.hash(keys) != meta["config_hash"] and not allow_mismatch:
            raise ConfigError(
                f"{name} checkpoint was built with config {meta['config_hash']}, current config hashes to "
                f"{expect.hash(keys)}; pass --allow-config-mismatch to load it anyway"
            )
        groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in meta["groups"]}
        for key, arr in load_tensors(blob).items():
            g, _, k = key.partition("/")
            if g not in groups:
                raise FormatError(f"{blob}: tensor {key!r} belongs to unknown group")
            groups[g][k] = arr
        for g, info in meta["groups"].items():
            if group_checksum(groups[g]) != info["sha256"]:
                raise FormatError(f"{blob}: checksum mismatch for group {g!r}")
        frozen = {g: bool(info["frozen"]) for g, info in meta["groups"].items()}
        return cls(cfg, groups, frozen, keys, meta.get("extra"))


def load_into(module: Module, *group_dicts: dict[str, np.ndarray], skip=()) -> None:
    state = {}
    for d in group_dicts:
        state.update({k: v for k, v in d.items() if k not in skip})
    module.load_state_dict(state)
