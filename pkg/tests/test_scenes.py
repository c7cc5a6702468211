import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spade.errors import FormatError
from spade.scenes import (
    ObjectRecord,
    Scene,
    SceneConfig,
    filter_train,
    generate_scene,
    generate_scenes,
    load_dataset,
    make_split,
    save_dataset,
    tag_distance_band,
)
from spade.scenes import rle
from spade.scenes.synth import LEFT_OF, NEAR, RIGHT_OF, spatial_relations

FIXTURE_LINE = (
    '{"id":"fx","size":[1,2,3],"grid":"AAAAAAAAAAAAAAAAAADwPwAAAAAAAABAAAAAAAAACEAAAAAAAAAQQAAAAAAAABRA",'
    '"objects":[{"category":4,"mask":{"size":[2,3],"counts":[1,2,3]}},'
    '{"category":7,"mask":{"size":[2,3],"counts":[3,1,2]}}],"relations":[[0,5,1]]}'
)


def box_object(x0, y0, x1, y1, cat=0, size=32):
    m = np.zeros((size, size), dtype=bool)
    m[y0 : y1 + 1, x0 : x1 + 1] = True
    return ObjectRecord(m, cat)


def oracle_relations(objects, H, W):
    """Independent re-derivation of the predicate rules from raw mask pixels."""
    info = []
    for o in objects:
        ys, xs = np.nonzero(o.mask)
        info.append(((xs.min() + xs.max()) / 2, (ys.min() + ys.max()) / 2, xs.min(), xs.max(), ys.min(), ys.max()))
    out = set()
    for s in range(len(objects)):
        for o in range(len(objects)):
            if s == o:
                continue
            sx, sy, sx0, sx1, sy0, sy1 = info[s]
            ox, oy, ox0, ox1, oy0, oy1 = info[o]
            vert = not (sy1 < oy0 or oy1 < sy0)
            horiz = not (sx1 < ox0 or ox1 < sx0)
            if vert and sx - (ox - W / 8) < 0:
                out.add((s, 0, o))
            if vert and sx - (ox + W / 8) > 0:
                out.add((s, 1, o))
            if horiz and sy - (oy - H / 8) < 0:
                out.add((s, 2, o))
            if horiz and sy - (oy + H / 8) > 0:
                out.add((s, 3, o))
            if vert and horiz:
                out.add((s, 4, o))
            elif ((sx - ox) ** 2 + (sy - oy) ** 2) < (W / 4) ** 2:
                out.add((s, 5, o))
    return out


def test_left_right_example():
    a = box_object(2, 14, 6, 18)
    b = box_object(26, 14, 30, 18)
    assert a.center == (4.0, 16.0) and b.center == (28.0, 16.0)
    rels = spatial_relations([a, b], 32, 32)
    assert (0, LEFT_OF, 1) in rels and (1, RIGHT_OF, 0) in rels
    assert all(p != NEAR for _, p, _ in rels)


def test_single_object_scene_has_no_relations():
    sc = generate_scene(3, SceneConfig(n_objects=(1, 1)))
    assert len(sc.objects) == 1 and sc.relations == []


def test_generated_relations_match_duplicate_rule_oracle():
    cfg = SceneConfig()
    for scene in generate_scenes(500, seed=123, config=cfg):
        scene.validate()
        assert set(scene.relations) == oracle_relations(scene.objects, cfg.height, cfg.width)
        assert len(set(scene.relations)) == len(scene.relations)


def test_object_masks_are_disjoint_and_bboxes_tight():
    for scene in generate_scenes(50, seed=5):
        total = sum(o.mask.astype(int) for o in scene.objects)
        assert total.max() <= 1
        for o in scene.objects:
            ys, xs = np.nonzero(o.mask)
            assert o.bbox == (xs.min(), ys.min(), xs.max(), ys.max())


def test_distance_band_examples():
    a = box_object(0, 0, 0, 0)
    b = box_object(12, 0, 12, 0)
    assert tag_distance_band(Scene(np.zeros((3, 32, 32)), [a, b], [(0, 0, 1)])) == ["DR"]
    c = box_object(0, 0, 0, 0)
    assert tag_distance_band(Scene(np.zeros((3, 32, 32)), [a, c], [(0, 4, 1)])) == ["NDR"]


def test_distance_bands_match_brute_force():
    for scene in generate_scenes(100, seed=9):
        expected = []
        for s, _, o in scene.relations:
            (sx, sy), (ox, oy) = scene.objects[s].center, scene.objects[o].center
            expected.append("DR" if math.sqrt((sx - ox) ** 2 + (sy - oy) ** 2) * 3 > scene.width else "NDR")
        assert tag_distance_band(scene) == expected


def test_balanced_bands():
    scenes = generate_scenes(200, seed=2, balance_bands=True)
    bands = [b for sc in scenes for b in tag_distance_band(sc)]
    assert abs(bands.count("DR") - bands.count("NDR")) <= 4


def test_split_ratio_seven_three():
    split = make_split(10, 10, seed=0)
    assert len(split.base_predicates) == 7 and len(split.novel_predicates) == 3
    assert len(split.base_objects) == 7 and len(split.novel_objects) == 3
    assert set(split.base_objects) | set(split.novel_objects) == set(range(10))
    assert not set(split.base_predicates) & set(split.novel_predicates)


def test_filter_modes():
    scenes = generate_scenes(300, seed=4)
    split = make_split(10, 6, seed=1)
    assert filter_train(scenes, split, "closed") == scenes
    ovr = filter_train(scenes, split, "OvR")
    assert len(ovr) == len(scenes)
    assert all(p not in split.novel_predicates for sc in ovr for _, p, _ in sc.relations)
    ovdr = filter_train(scenes, split, "OvD+R")
    assert 0 < len(ovdr) < len(scenes)
    for sc in ovdr:
        assert all(o.category_id not in split.novel_objects for o in sc.objects)
        assert all(p not in split.novel_predicates for _, p, _ in sc.relations)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_rle_round_trip(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.4
    enc = rle.encode(m)
    assert sum(enc["counts"]) == h * w
    assert np.array_equal(rle.decode(enc), m)


def test_dataset_round_trip(tmp_path):
    scenes = generate_scenes(10, seed=8) + [generate_scene(1, SceneConfig(n_objects=(1, 1)), "lonely")]
    path = tmp_path / "d.jsonl"
    save_dataset(scenes, path)
    loaded = load_dataset(path)
    assert len(loaded) == len(scenes)
    for a, b in zip(scenes, loaded):
        assert a.grid.tobytes() == b.grid.tobytes()
        assert a.relations == b.relations and a.scene_id == b.scene_id
        for oa, ob in zip(a.objects, b.objects):
            assert np.array_equal(oa.mask, ob.mask) and oa.category_id == ob.category_id
    assert loaded[-1].relations == []


def test_fixture_line_parses(tmp_path):
    path = tmp_path / "fx.jsonl"
    path.write_text(FIXTURE_LINE + "\n")
    (sc,) = load_dataset(path)
    assert sc.scene_id == "fx"
    assert np.array_equal(sc.grid, np.arange(6.0).reshape(1, 2, 3))
    assert np.array_equal(sc.objects[0].mask, [[False, True, True], [False, False, False]])
    assert np.array_equal(sc.objects[1].mask, [[False, False, False], [True, False, False]])
    assert [o.category_id for o in sc.objects] == [4, 7]
    assert sc.relations == [(0, 5, 1)]


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(FIXTURE_LINE + "\n" + FIXTURE_LINE[:-7] + "\n")
    with pytest.raises(FormatError, match="line 2"):
        load_dataset(path)
