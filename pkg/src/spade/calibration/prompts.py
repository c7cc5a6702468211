"""Toy text-embedding provider and relation prompts.

Prompts follow ``[subject] is [predicate] [object] ...``; the filler word is
dropped, so every triplet contributes three tokens.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

# Geometric meaning of each spatial predicate: (dx, dy, overlap, proximity).
PREDICATE_SEMANTICS = np.array(
    [
        [-1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)


class ToyTextEncoder:
    """Frozen seeded lookup table: one vector of norm ``sqrt(dim)`` per name.

    Predicate vectors are a fixed linear image of ``PREDICATE_SEMANTICS`` plus
    a small random part, so opposite relations get anti-correlated embeddings.
    Object vectors may be supplied (for example, aligned with an image
    embedder); otherwise they are random.
    """

    def __init__(self, n_objects: int, n_predicates: int, dim: int, seed: int = 0, object_vectors=None):
        rng = np.random.default_rng(seed)
        if object_vectors is None:
            obj = rng.normal(size=(n_objects, dim))
        else:
            obj = np.asarray(object_vectors, dtype=np.float64)
            if obj.shape != (n_objects, dim):
                raise ContractError(f"object vectors must be {(n_objects, dim)}, got {obj.shape}")
        sem = PREDICATE_SEMANTICS[np.arange(n_predicates) % len(PREDICATE_SEMANTICS)]
        proj = rng.normal(size=(sem.shape[1], dim))
        pred = sem @ proj + 0.3 * rng.normal(size=(n_predicates, dim))
        r = np.sqrt(dim)
        self.objects = r * _unit(obj)
        self.predicates = r * _unit(pred)
        self.pad = r * _unit(rng.normal(size=dim))
        self.dim = dim

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_predicates(self) -> int:
        return len(self.predicates)

    def object(self, c: int) -> np.ndarray:
        if not 0 <= c < self.n_objects:
            raise ContractError(f"unknown object category id {c} (vocabulary has {self.n_objects})")
        return self.objects[c]

    def predicate(self, p: int) -> np.ndarray:
        if not 0 <= p < self.n_predicates:
            raise ContractError(f"unknown predicate id {p} (vocabulary has {self.n_predicates})")
        return self.predicates[p]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def build_prompt_tokens(scene, vocab: ToyTextEncoder) -> np.ndarray:
    """``[n_tokens, dim]`` in annotation order; object-only prompt when there are no relations."""
    cats = [o.category_id for o in scene.objects]
    if scene.relations:
        toks = []
        for s, p, o in scene.relations:
            toks += [vocab.object(cats[s]), vocab.predicate(p), vocab.object(cats[o])]
    else:
        toks = [vocab.object(c) for c in cats]
    if not toks:
        raise ContractError(f"scene {scene.scene_id!r} has no objects to describe")
    return np.stack(toks)


def fit_length(tokens: np.ndarray, n_tok: int, pad: np.ndarray) -> np.ndarray:
    """Truncate or pad with ``pad`` to exactly ``n_tok`` rows."""
    if len(tokens) >= n_tok:
        return tokens[:n_tok].copy()
    return np.concatenate([tokens, np.repeat(pad[None, :], n_tok - len(tokens), axis=0)])
