import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spade.errors import ContractError, DimensionError
from spade.diffusion import (
    ConstantDenoiser,
    LinearToyDenoiser,
    NoiseSchedule,
    UNetConfig,
    UNetLite,
    ZeroDenoiser,
    ddim_invert,
    ddim_sample,
    ddim_step,
    default_schedule,
    forward_noise,
    round_trip_rmse,
)
from spade.tensor import finite_diff_check, ops

SMALL = UNetConfig(height=8, width=8, widths=(4, 4, 4), d_cond=4, d_att=4, n_temb=4)


@pytest.fixture
def sched():
    return default_schedule(20)


def rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 1000), st.floats(1e-5, 1e-3), st.floats(1e-3, 0.05))
def test_schedule_invariants(T, b0, b1):
    s = NoiseSchedule.linear(T, b0, max(b0, b1))
    assert s.alpha_bars[0] == 1.0
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alphas > 0) & (s.alphas < 1))
    np.testing.assert_allclose(np.cumprod(s.alphas), s.alpha_bars[1:], rtol=1e-12)


def test_respaced_schedule_keeps_endpoints():
    full = NoiseSchedule.linear()
    r = full.respaced(50)
    assert r.T == 50 and r.timesteps[0] == 0 and r.timesteps[-1] == 1000
    assert r.alpha_bars[-1] == full.alpha_bars[-1]


def test_bad_schedule_rejected():
    with pytest.raises(ContractError):
        NoiseSchedule(np.array([1.0, 0.5, 0.7]), np.arange(3), 2)
    with pytest.raises(ContractError):
        NoiseSchedule.linear(0)


def test_forward_noise_trivial_cases(sched):
    x, eps = rand((3, 4, 4)), rand((3, 4, 4), 1)
    assert np.array_equal(forward_noise(x, 0, eps, sched), x)
    t = 7
    np.testing.assert_allclose(forward_noise(x, t, np.zeros_like(x), sched), math.sqrt(sched.alpha_bars[t]) * x, rtol=0, atol=0)


def test_forward_noise_scalar_reevaluation():
    s = NoiseSchedule.linear(100)
    t = s.T // 2
    ab = 1.0
    for k in range(t):
        ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * k / 99)
    x, eps = rand((2, 3, 3)), rand((2, 3, 3), 1)
    out = forward_noise(x, t, eps, s)
    for idx in np.ndindex(x.shape):
        assert abs(out[idx] - (math.sqrt(ab) * x[idx] + math.sqrt(1 - ab) * eps[idx])) <= 1e-12


def test_forward_noise_errors(sched):
    with pytest.raises(ContractError):
        forward_noise(np.zeros(3), sched.T + 1, np.zeros(3), sched)
    with pytest.raises(DimensionError):
        forward_noise(np.zeros(3), 1, np.zeros(4), sched)
    with pytest.raises(ContractError):
        ddim_step(np.zeros(3), 0, np.zeros(3), sched)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_true_eps_step_to_data_end_is_identity(seed):
    s = default_schedule(10)
    x, eps = rand((3, 4, 4), seed), rand((3, 4, 4), seed + 1)
    xt = forward_noise(x, 1, eps, s)
    np.testing.assert_allclose(ddim_step(xt, 1, eps, s), x, atol=1e-12)


def test_zero_eps_step_is_rescale(sched):
    x = rand((3, 4, 4))
    t = 5
    ratio = math.sqrt(sched.alpha_bars[t - 1] / sched.alpha_bars[t])
    np.testing.assert_allclose(ddim_step(x, t, np.zeros_like(x), sched), ratio * x, rtol=1e-14)


def test_constant_denoiser_trajectory_closed_form(sched):
    # with constant eps, x_t / sqrt(ab_t) - eps * sqrt((1 - ab_t) / ab_t) is invariant
    c = rand((3, 4, 4), 2)
    z = rand((3, 4, 4), 3)
    inv = z / math.sqrt(sched.alpha_bars[-1]) - c * math.sqrt((1 - sched.alpha_bars[-1]) / sched.alpha_bars[-1])
    xt = z
    for t in range(sched.T, 0, -1):
        xt = ddim_step(xt, t, c, sched)
        ab = sched.alpha_bars[t - 1]
        np.testing.assert_allclose(xt, math.sqrt(ab) * inv + math.sqrt(1 - ab) * c, atol=1e-10)


def test_constant_denoiser_round_trip_exact(sched):
    x = rand((3, 8, 8))
    den = ConstantDenoiser(rand((3, 8, 8), 4))
    z, _ = ddim_invert(x, den, None, sched)
    xr, _ = ddim_sample(z, den, None, sched)
    assert np.abs(xr - x).max() <= 1e-10


def test_zero_denoiser_inversion_closed_form(sched):
    x = rand((3, 8, 8))
    z, _ = ddim_invert(x, ZeroDenoiser(), None, sched)
    np.testing.assert_allclose(z, math.sqrt(sched.alpha_bars[-1]) * x, rtol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_round_trip_error_non_increasing_in_steps(seed):
    x = rand((3, 8, 8), 10 + seed)
    den = LinearToyDenoiser(3, seed)
    errs = [round_trip_rmse(x, den, None, default_schedule(s)) for s in (20, 50, 100)]
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] < errs[0]


def test_unet_output_shapes():
    net = UNetLite(seed=1)
    eps, maps, pyr = net(rand((3, 32, 32)), 0, rand((5, 16)))
    assert eps.shape == (3, 32, 32)
    assert [m.shape for m in maps] == [(1024, 5), (256, 5), (64, 5)]
    assert pyr.features.shape == (32 * 32, sum(net.cfg.widths))


def test_unet_batched_matches_unbatched():
    net = UNetLite(SMALL, seed=2)
    xs, cs = rand((3, 3, 8, 8)), rand((3, 2, 4), 1)
    eps_b, maps_b, pyr_b = net(xs, 40, cs)
    for i in range(3):
        eps, maps, pyr = net(xs[i], 40, cs[i])
        np.testing.assert_allclose(eps_b.data[i], eps.data, atol=1e-12)
        np.testing.assert_allclose(pyr_b.features.data[i], pyr.features.data, atol=1e-12)
        for a, b in zip(maps_b, maps):
            np.testing.assert_allclose(a.data[i], b.data, atol=1e-12)


def test_single_token_maps_are_ones():
    _, maps, _ = UNetLite(seed=0)(rand((3, 32, 32)), 0, rand((1, 16)))
    for m in maps:
        assert np.array_equal(m.data, np.ones_like(m.data))


@pytest.mark.parametrize("scale", [1.0, 2.0, 50.0])
def test_maps_row_stochastic(scale):
    cond = rand((6, 16), 3)
    _, maps, _ = UNetLite(seed=0)(rand((3, 32, 32)), 0, scale * cond)
    for m in maps:
        assert np.abs(m.data.sum(axis=-1) - 1).max() <= 1e-12
        assert m.data.min() >= 0


def test_pyramid_coarse_levels_are_blockwise_constant():
    _, _, pyr = UNetLite(SMALL, seed=0)(rand((3, 8, 8)), 0, rand((2, 4)))
    f = pyr.features.data.reshape(8, 8, -1)
    coarse = f[:, :, 8:]
    assert np.array_equal(coarse[0, 0], coarse[3, 3])
    assert not np.array_equal(f[0, 0, :4], f[1, 1, :4])


def test_unet_eps_gradient_matches_finite_differences():
    net = UNetLite(SMALL, seed=3)
    x, cond = rand((3, 8, 8), 5), rand((3, 4), 6)

    def f():
        eps, _, _ = net(x, 250, cond)
        return ops.sum(ops.mul(eps, eps))

    rep = finite_diff_check(f, dict(net.named_parameters()), step=1e-5, tol=1e-4, max_coords=6)
    assert rep.passed, rep


def test_empty_conditioning_rejected():
    with pytest.raises(ContractError):
        UNetLite(SMALL)(rand((3, 8, 8)), 0, np.zeros((0, 4)))
