"""Base/novel vocabulary splits and open-vocabulary training filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .synth import Scene

MODES = ("closed", "OvR", "OvD+R")
BASE_FRACTION = 0.7


@dataclass(frozen=True)
class VocabSplit:
    base_predicates: tuple[int, ...]
    novel_predicates: tuple[int, ...]
    base_objects: tuple[int, ...]
    novel_objects: tuple[int, ...]

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "VocabSplit":
        return cls(*(tuple(int(i) for i in d[k]) for k in ("base_predicates", "novel_predicates", "base_objects", "novel_objects")))


def _partition(n: int, rng: np.random.Generator, what: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    n_base = int(np.floor(BASE_FRACTION * n + 0.5))
    if n_base == 0 or n_base == n:
        raise ContractError(f"cannot split {n} {what} into non-empty base and novel sets")
    perm = rng.permutation(n)
    return tuple(sorted(int(i) for i in perm[:n_base])), tuple(sorted(int(i) for i in perm[n_base:]))


def make_split(n_objects: int, n_predicates: int, seed: int) -> VocabSplit:
    rng = np.random.default_rng(seed)
    bp, npred = _partition(n_predicates, rng, "predicates")
    bo, nobj = _partition(n_objects, rng, "object classes")
    return VocabSplit(bp, npred, bo, nobj)


def filter_train(scenes: list[Scene], split: VocabSplit | None, mode: str) -> list[Scene]:
    """Training-set view for a protocol.

    ``OvR`` drops triplets with novel predicates; ``OvD+R`` further drops whole
    scenes containing any novel-object instance.  Input scenes are not mutated.
    """
    if mode not in MODES:
        raise ContractError(f"unknown split mode {mode!r}; expected one of {MODES}")
    if mode == "closed":
        return list(scenes)
    if split is None:
        raise ContractError(f"mode {mode} requires a vocabulary split")
    novel_p = set(split.novel_predicates)
    novel_o = set(split.novel_objects)
    out = []
    for sc in scenes:
        if mode == "OvD+R" and any(o.category_id in novel_o for o in sc.objects):
            continue
        rels = [r for r in sc.relations if r[1] not in novel_p]
        out.append(Scene(sc.grid, sc.objects, rels, sc.scene_id))
    return out


def seen_only(scenes: list[Scene], split: VocabSplit) -> list[Scene]:
    """Scenes whose every object and predicate category is a base one."""
    bo, bp = set(split.base_objects), set(split.base_predicates)
    return [
        sc
        for sc in scenes
        if all(o.category_id in bo for o in sc.objects) and all(p in bp for _, p, _ in sc.relations)
    ]
