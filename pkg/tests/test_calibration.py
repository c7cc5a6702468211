import numpy as np
import pytest

from spade.calibration import (
    LoraLayer,
    ToyImageEncoder,
    ToyTextEncoder,
    base_checksums,
    build_prompt_tokens,
    build_student,
    calibrate,
    calibration_loss,
    collect_teacher_maps,
    lora_layers,
    prompt_conditioning,
    teacher_attention,
)
from spade.diffusion import UNetConfig, UNetLite, default_schedule
from spade.errors import ConfigError, ContractError, DimensionError
from spade.scenes import ObjectRecord, Scene, generate_scenes
from spade.tensor import ParamInit, Tensor, finite_diff_check, ops

SMALL = UNetConfig(height=8, width=8, widths=(4, 4, 4), d_cond=4, d_att=4, n_temb=4)


def toy_scene(relations, cats=(1, 2, 3)):
    objs = []
    for i, c in enumerate(cats):
        m = np.zeros((8, 8), dtype=bool)
        m[i, i] = True
        objs.append(ObjectRecord(m, c))
    return Scene(np.zeros((3, 8, 8)), objs, list(relations), "toy")


@pytest.fixture(scope="module")
def vocab():
    return ToyTextEncoder(10, 6, 16, seed=0)


def test_prompt_single_triplet_order(vocab):
    toks = build_prompt_tokens(toy_scene([(0, 3, 1)]), vocab)
    assert toks.shape == (3, 16)
    np.testing.assert_array_equal(toks, np.stack([vocab.object(1), vocab.predicate(3), vocab.object(2)]))


def test_prompt_two_triplets_follow_annotation_order(vocab):
    toks = build_prompt_tokens(toy_scene([(2, 0, 1), (0, 5, 2)]), vocab)
    expected = [vocab.object(3), vocab.predicate(0), vocab.object(2), vocab.object(1), vocab.predicate(5), vocab.object(3)]
    np.testing.assert_array_equal(toks, np.stack(expected))


def test_prompt_without_relations_lists_objects(vocab):
    toks = build_prompt_tokens(toy_scene([]), vocab)
    np.testing.assert_array_equal(toks, np.stack([vocab.object(c) for c in (1, 2, 3)]))


def test_prompt_unknown_category(vocab):
    with pytest.raises(ContractError, match="category id 42"):
        build_prompt_tokens(toy_scene([], cats=(42,)), vocab)


def test_conditioning_is_padded_and_truncated(vocab):
    cond = prompt_conditioning(toy_scene([(0, 3, 1)]), vocab, 5)
    assert cond.shape == (5, 16)
    np.testing.assert_array_equal(cond[3:], np.stack([vocab.pad, vocab.pad]))
    assert prompt_conditioning(toy_scene([(0, 3, 1), (1, 2, 0)]), vocab, 4).shape == (4, 16)


def test_lora_zero_init_matches_base_exactly():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(6, 5))
    layer = LoraLayer(W, 2, ParamInit(1))
    x = rng.normal(size=(7, 6))
    assert np.array_equal(layer(Tensor(x)).data, x @ W)
    assert not layer.W.requires_grad and layer.B.requires_grad and layer.D.requires_grad


def test_lora_rank_bound():
    with pytest.raises(ConfigError):
        LoraLayer(np.ones((3, 3)), 4, ParamInit(0))
    layer = LoraLayer(np.ones((6, 5)), 2, ParamInit(0))
    layer.D.data = np.random.default_rng(1).normal(size=layer.D.shape)
    s = np.linalg.svd(layer.delta(), compute_uv=False)
    assert (s > 1e-8).sum() <= 2


def test_lora_cross_attention_gradients():
    rng = np.random.default_rng(2)
    layer = LoraLayer(rng.normal(size=(4, 3)), 2, ParamInit(3), b_std=0.5)
    layer.D.data = rng.normal(size=layer.D.shape)
    q = Tensor(rng.normal(size=(5, 3)))
    cond = Tensor(rng.normal(size=(4, 4)))

    def f():
        k = layer(cond)
        a = ops.softmax(ops.matmul(q, ops.swap_last(k)), axis=-1)
        return ops.sum(ops.mul(a, a))

    rep = finite_diff_check(f, {"B": layer.B, "D": layer.D}, step=1e-5)
    assert rep.passed, rep


def test_calibration_loss_examples():
    a = Tensor(np.full((2, 2), 0.75))
    b = Tensor(np.full((2, 2), 0.25))
    assert calibration_loss([a], [a]).item() == 0.0
    assert calibration_loss([a], [b], lam=1.0).item() == pytest.approx(0.5, abs=1e-15)
    assert calibration_loss([a, a], [b, a], lam=2.0).item() == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DimensionError):
        calibration_loss([a], [Tensor(np.ones((2, 3)))])
    with pytest.raises(DimensionError):
        calibration_loss([a], [])


@pytest.fixture(scope="module")
def small_setup():
    cfg_scenes = generate_scenes(3, seed=1)
    grids = np.stack([sc.grid[:, :8, :8] for sc in cfg_scenes])
    teacher = UNetLite(SMALL, seed=5).freeze()
    enc = ToyImageEncoder(3, 8, cells=4, seed=2)
    return grids, teacher, enc


def test_calibration_loss_gradient_wrt_lora(small_setup):
    grids, teacher, enc = small_setup
    student = build_student(teacher, enc, n_tok=3, rank=2, seed=3, adapter_hidden=8)
    rng = np.random.default_rng(4)
    for layer in lora_layers(student.unet):
        layer.D.data = rng.normal(0, 0.3, size=layer.D.shape)
    target = [Tensor(rng.dirichlet(np.ones(3), size=(3, m))) for m in (64, 16, 4)]

    def f():
        _, maps, _ = student(grids, 0.0)
        return calibration_loss(maps, target)

    params = {k: v for k, v in student.trainable_groups().items() if k.startswith("unet.")}
    rep = finite_diff_check(f, params, step=1e-6, tol=1e-4)
    assert rep.passed, rep


def test_teacher_attention_deterministic_and_row_stochastic(vocab):
    teacher = UNetLite(seed=3).freeze()
    sched = default_schedule(10)
    for sc in generate_scenes(50, seed=11):
        cond = prompt_conditioning(sc, vocab, 12)
        maps = teacher_attention(sc.grid, teacher, cond, sched)
        for m in maps:
            assert np.abs(m.sum(axis=-1) - 1).max() <= 1e-12
    again = teacher_attention(sc.grid, teacher, cond, sched)
    assert all(np.array_equal(a, b) for a, b in zip(maps, again))


def test_teacher_single_token_maps_are_ones(vocab):
    teacher = UNetLite(seed=3).freeze()
    (sc,) = generate_scenes(1, seed=2)
    maps = teacher_attention(sc.grid, teacher, vocab.object(0)[None, :], default_schedule(5))
    assert all(np.array_equal(m, np.ones_like(m)) for m in maps)


def test_teacher_step_override_and_no_inversion(vocab):
    teacher = UNetLite(seed=3).freeze()
    (sc,) = generate_scenes(1, seed=2)
    cond = prompt_conditioning(sc, vocab, 12)
    sched = default_schedule(5)
    end = teacher_attention(sc.grid, teacher, cond, sched, step="data_end")
    start = teacher_attention(sc.grid, teacher, cond, sched, step="noise_end")
    assert not np.array_equal(end[0], start[0])
    rnd = teacher_attention(sc.grid, teacher, cond, sched, inversion=False, rng=np.random.default_rng(0))
    assert rnd[0].shape == end[0].shape and not np.array_equal(rnd[0], end[0])
    with pytest.raises(ConfigError):
        teacher_attention(sc.grid, teacher, cond, sched, step="middle")


def test_student_first_forward_equals_base(small_setup):
    grids, teacher, enc = small_setup
    student = build_student(teacher, enc, n_tok=3, rank=2)
    cond = student.captioner(grids)
    eps_s, maps_s, _ = student.unet(grids, 0.0, cond)
    eps_t, maps_t, _ = teacher(grids, 0.0, cond)
    assert np.abs(eps_s.data - eps_t.data).max() <= 1e-12
    assert all(np.abs(a.data - b.data).max() <= 1e-12 for a, b in zip(maps_s, maps_t))


def _run(small_setup, **kw):
    grids, teacher, enc = small_setup
    student = build_student(teacher, enc, n_tok=3, rank=2, lora=kw.pop("lora", True), adapter_hidden=8)
    vocab = ToyTextEncoder(10, 6, 4, seed=1)
    scenes = generate_scenes(3, seed=1)
    for sc, g in zip(scenes, grids):
        sc.grid = g
    tm = collect_teacher_maps(scenes, teacher, vocab, 3, default_schedule(5), inversion=kw.pop("inversion", True))
    return student, calibrate(student, grids, tm, **kw)


def test_lr_zero_leaves_everything_bit_identical(small_setup):
    student, _ = _run(small_setup, steps=0, lr=0.0)
    before = student.state_dict()
    student, res = _run(small_setup, steps=5, lr=0.0)
    after = student.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert len(res.losses) == 6 and len(set(res.losses)) == 1


def test_calibration_only_touches_adapter_and_lora(small_setup):
    student, res = _run(small_setup, steps=20, lr=1e-2)
    before = build_student(small_setup[1], small_setup[2], n_tok=3, rank=2, adapter_hidden=8).state_dict()
    after = student.state_dict()
    changed = {k for k in before if not np.array_equal(before[k], after[k])}
    assert changed and all(k.startswith("captioner.") or k.endswith((".B", ".D")) for k in changed)
    assert base_checksums(student) == base_checksums(build_student(small_setup[1], small_setup[2], 3, rank=2))
    assert all(np.isfinite(res.losses)) and res.final < res.initial


def test_no_lora_variant_updates_kv_weights(small_setup):
    student, res = _run(small_setup, steps=10, lr=1e-2, lora=False, inversion=False)
    assert not lora_layers(student.unet)
    assert base_checksums(student) != base_checksums(build_student(small_setup[1], small_setup[2], 3, lora=False))
    assert all(np.isfinite(res.losses))
