"""Synthetic spatial scenes with exact geometric ground truth.

Predicate rules (frozen; ``W``/``H`` are grid width/height, centers and boxes
come from the tight bounding box of each visible mask, x = column, y = row):

* ``left of``     cx_s < cx_o - W/8 and the boxes' row spans intersect
* ``right of``    cx_s > cx_o + W/8 and the boxes' row spans intersect
* ``above``       cy_s < cy_o - H/8 and the boxes' column spans intersect
* ``below``       cy_s > cy_o + H/8 and the boxes' column spans intersect
* ``overlapping`` the two boxes intersect
* ``near``        center distance < W/4 and the boxes do not intersect

This predicate set is a proxy vocabulary for "spatial relationships"; the
real datasets annotate far richer predicates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ..errors import ContractError, GenerationError

PREDICATES = ("left of", "right of", "above", "below", "overlapping", "near")
LEFT_OF, RIGHT_OF, ABOVE, BELOW, OVERLAPPING, NEAR = range(6)

OBJECT_NAMES = ("apple", "ball", "cup", "die", "egg", "fork", "gear", "hat", "ink", "jar")


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    n_objects: tuple[int, int] = (2, 4)
    n_object_classes: int = 10
    min_size: int = 5
    max_size: int = 12
    noise_sigma: float = 0.1
    min_visible_frac: float = 0.6
    min_pixels: int = 12
    ellipse_prob: float = 0.5
    signature_seed: int = 0
    max_retries: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_objects"] = list(self.n_objects)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "n_objects" in d:
            d["n_objects"] = tuple(d["n_objects"])
        return cls(**d)


@dataclass
class ObjectRecord:
    mask: np.ndarray
    category_id: int

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0


@dataclass
class Scene:
    grid: np.ndarray
    objects: list[ObjectRecord]
    relations: list[tuple[int, int, int]] = field(default_factory=list)
    scene_id: str = ""

    @property
    def height(self) -> int:
        return self.grid.shape[1]

    @property
    def width(self) -> int:
        return self.grid.shape[2]

    def validate(self) -> None:
        n = len(self.objects)
        for s, p, o in self.relations:
            if not (0 <= s < n and 0 <= o < n) or s == o:
                raise ContractError(f"scene {self.scene_id}: bad relation {(s, p, o)}")
        for i, obj in enumerate(self.objects):
            if obj.mask.shape != self.grid.shape[1:] or not obj.mask.any():
                raise ContractError(f"scene {self.scene_id}: object {i} mask empty or off-grid")


def category_signatures(n_classes: int, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Well-separated per-class channel vectors drawn from {-1, 0, 1}^C minus the origin."""
    cands = np.array([v for v in itertools.product((-1.0, 0.0, 1.0), repeat=channels) if any(v)])
    if n_classes > len(cands):
        raise ContractError(f"{n_classes} classes exceed {len(cands)} distinct signatures for C={channels}")
    rng = np.random.default_rng(seed)
    cands = cands[rng.permutation(len(cands))]
    chosen = [0]
    dist = np.linalg.norm(cands - cands[0], axis=1)
    while len(chosen) < n_classes:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(cands - cands[nxt], axis=1))
    return cands[chosen]


def _boxes_intersect(a, b) -> tuple[bool, bool]:
    """(row spans intersect, column spans intersect)."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    rows = max(ay0, by0) <= min(ay1, by1)
    cols = max(ax0, bx0) <= min(ax1, bx1)
    return rows, cols


def pair_predicates(sub: ObjectRecord, obj: ObjectRecord, height: int, width: int) -> list[int]:
    rows, cols = _boxes_intersect(sub.bbox, obj.bbox)
    (sx, sy), (ox, oy) = sub.center, obj.center
    out = []
    if sx < ox - width / 8 and rows:
        out.append(LEFT_OF)
    if sx > ox + width / 8 and rows:
        out.append(RIGHT_OF)
    if sy < oy - height / 8 and cols:
        out.append(ABOVE)
    if sy > oy + height / 8 and cols:
        out.append(BELOW)
    boxes = rows and cols
    if boxes:
        out.append(OVERLAPPING)
    if math.hypot(sx - ox, sy - oy) < width / 4 and not boxes:
        out.append(NEAR)
    return out


def spatial_relations(objects: list[ObjectRecord], height: int, width: int) -> list[tuple[int, int, int]]:
    rels = []
    for s, o in itertools.permutations(range(len(objects)), 2):
        for p in pair_predicates(objects[s], objects[o], height, width):
            rels.append((s, p, o))
    return rels


def center_distance(a: ObjectRecord, b: ObjectRecord) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def tag_distance_band(scene: Scene) -> list[str]:
    """``"DR"`` when the endpoints' box centers are more than W/3 apart, else ``"NDR"``."""
    limit = scene.width / 3
    return ["DR" if center_distance(scene.objects[s], scene.objects[o]) > limit else "NDR" for s, _, o in scene.relations]


def _shape_mask(kind: str, x0: int, y0: int, w: int, h: int, height: int, width: int) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    if kind == "rect":
        m[y0 : y0 + h, x0 : x0 + w] = True
        return m
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    inside = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
    m[y0 : y0 + h, x0 : x0 + w] = inside
    return m


def generate_scene(seed: int | np.random.SeedSequence, config: SceneConfig = SceneConfig(), scene_id: str = "") -> Scene:
    """Place non-identical rectangles/ellipses (later shapes occlude earlier ones)."""
    H, W, C = config.height, config.width, config.channels
    lo, hi = config.n_objects
    if lo < 1 or hi < lo:
        raise ContractError(f"bad object count range {config.n_objects}")
    if hi * config.min_size**2 > 0.6 * H * W or config.max_size > min(H, W):
        raise ContractError(f"{H}x{W} grid too small for up to {hi} objects of size >= {config.min_size}")
    rng = np.random.default_rng(seed)
    sigs = category_signatures(config.n_object_classes, C, config.signature_seed)
    n = int(rng.integers(lo, hi + 1))
    for _ in range(config.max_retries):
        label = np.full((H, W), -1)
        shapes = []
        for k in range(n):
            kind = "ellipse" if rng.random() < config.ellipse_prob else "rect"
            w = int(rng.integers(config.min_size, config.max_size + 1))
            h = int(rng.integers(config.min_size, config.max_size + 1))
            x0 = int(rng.integers(0, W - w + 1))
            y0 = int(rng.integers(0, H - h + 1))
            shapes.append((kind, x0, y0, w, h))
            label[_shape_mask(kind, x0, y0, w, h, H, W)] = k
        if len(set(shapes)) < n:
            continue
        masks = [label == k for k in range(n)]
        drawn = [_shape_mask(*s, H, W).sum() for s in shapes]
        if all(m.sum() >= max(config.min_pixels, config.min_visible_frac * d) for m, d in zip(masks, drawn)):
            break
    else:
        raise GenerationError(f"could not place {n} objects after {config.max_retries} retries")
    cats = rng.integers(0, config.n_object_classes, size=n)
    grid = rng.normal(0.0, config.noise_sigma, size=(C, H, W))
    for m, c in zip(masks, cats):
        grid[:, m] += sigs[c][:, None]
    objects = [ObjectRecord(m, int(c)) for m, c in zip(masks, cats)]
    scene = Scene(grid, objects, spatial_relations(objects, H, W), scene_id)
    scene.validate()
    return scene


def child_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def generate_scenes(
    n_scenes: int,
    seed: int,
    config: SceneConfig = SceneConfig(),
    balance_bands: bool = False,
    slack: int = 4,
    prefix: str = "s",
) -> list[Scene]:
    """Generate scenes from per-index child seeds.

    With ``balance_bands`` a candidate scene is kept only if it does not push
    the running |#DR - #NDR| relation count beyond ``slack`` (or reduces it),
    so the corpus carries (near) equal DR and NDR relation counts.
    """
    scenes: list[Scene] = []
    diff = 0
    index = 0
    budget = 200 * max(n_scenes, 1)
    while len(scenes) < n_scenes:
        if index >= budget:
            raise GenerationError(f"band balancing exhausted {budget} candidates")
        scene = generate_scene(child_seed(seed, index), config, scene_id=f"{prefix}{index:06d}")
        index += 1
        if balance_bands:
            bands = tag_distance_band(scene)
            d = bands.count("DR") - bands.count("NDR")
            if abs(diff + d) > slack and abs(diff + d) >= abs(diff):
                continue
            diff += d
        scenes.append(scene)
    return scenes
