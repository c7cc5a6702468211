"""Dataset JSONL (one scene per line) and the ``dataset.meta.json`` sidecar.

Line schema::

    {"id": str, "size": [C, H, W], "grid": base64(little-endian float64, row-major),
     "objects": [{"category": int, "mask": RLE}], "relations": [[s, p, o], ...]}
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from . import rle
from .synth import ObjectRecord, Scene

META_NAME = "dataset.meta.json"


def scene_to_json(scene: Scene) -> dict:
    grid = np.ascontiguousarray(scene.grid, dtype="<f8")
    return {
        "id": scene.scene_id,
        "size": list(grid.shape),
        "grid": base64.b64encode(grid.tobytes()).decode("ascii"),
        "objects": [{"category": int(o.category_id), "mask": rle.encode(o.mask)} for o in scene.objects],
        "relations": [[int(s), int(p), int(o)] for s, p, o in scene.relations],
    }


def scene_from_json(d: dict) -> Scene:
    try:
        shape = tuple(int(v) for v in d["size"])
        raw = base64.b64decode(d["grid"], validate=True)
        if len(shape) != 3 or len(raw) != 8 * int(np.prod(shape)):
            raise FormatError(f"grid payload does not match size {shape}")
        grid = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        objects = []
        for o in d["objects"]:
            mask = rle.decode(o["mask"])
            if mask.shape != shape[1:]:
                raise FormatError(f"mask size {mask.shape} does not match grid {shape}")
            objects.append(ObjectRecord(mask, int(o["category"])))
        rels = [tuple(int(v) for v in r) for r in d["relations"]]
        if any(len(r) != 3 for r in rels):
            raise FormatError("relations must be [subject, predicate, object] triples")
        scene = Scene(grid, objects, rels, str(d["id"]))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed scene record: {exc!r}") from None
    scene.validate()
    return scene


def save_dataset(scenes: list[Scene], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sc in scenes:
            fh.write(json.dumps(scene_to_json(sc), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path: str | Path) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc.msg}", line=lineno) from None
            try:
                scenes.append(scene_from_json(record))
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno) from None
    return scenes


def save_meta(directory: str | Path, meta: dict) -> Path:
    path = Path(directory) / META_NAME
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_meta(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / META_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc.msg}", line=exc.lineno) from None
