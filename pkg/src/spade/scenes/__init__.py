from .io import load_dataset, load_meta, save_dataset, save_meta
from .splits import MODES, VocabSplit, filter_train, make_split, seen_only
from .synth import (
    OBJECT_NAMES,
    PREDICATES,
    ObjectRecord,
    Scene,
    SceneConfig,
    category_signatures,
    generate_scene,
    generate_scenes,
    spatial_relations,
    tag_distance_band,
)

__all__ = [
    "MODES",
    "OBJECT_NAMES",
    "PREDICATES",
    "ObjectRecord",
    "Scene",
    "SceneConfig",
    "VocabSplit",
    "category_signatures",
    "filter_train",
    "generate_scene",
    "generate_scenes",
    "load_dataset",
    "load_meta",
    "make_split",
    "save_dataset",
    "save_meta",
    "seen_only",
    "spatial_relations",
    "tag_distance_band",
]


def object_names(n: int) -> list[str]:
    return [OBJECT_NAMES[i] if i < len(OBJECT_NAMES) else f"object{i}" for i in range(n)]
