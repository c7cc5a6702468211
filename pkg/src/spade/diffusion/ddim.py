"""Forward noising, the deterministic DDIM update, and first-order inversion.

A denoiser is any callable ``denoiser(x_t, t_train, cond) -> (eps, maps)``
operating on numpy arrays, where ``maps`` is a (possibly empty) list of
cross-attention matrices.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import DimensionError
from .schedule import NoiseSchedule

Denoiser = Callable[[np.ndarray, int, "np.ndarray | None"], "tuple[np.ndarray, list[np.ndarray]]"]


def forward_noise(x, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    x, eps = np.asarray(x, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise DimensionError(f"forward_noise: x {x.shape} vs eps {eps.shape}")
    schedule.check_t(t)
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


def ddim_step(x_t, t: int, eps_pred, schedule: NoiseSchedule) -> np.ndarray:
    """x_t -> x_{t-1} with the deterministic (eta = 0) DDIM update."""
    schedule.check_t(t, lo=1)
    ab_t, ab_prev = schedule.alpha_bars[t], schedule.alpha_bars[t - 1]
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps_pred) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_pred


def ddim_inverse_step(x_prev, t: int, eps_pred, schedule: NoiseSchedule) -> np.ndarray:
    """x_{t-1} -> x_t: the DDIM update solved for x_t."""
    schedule.check_t(t, lo=1)
    ab_t, ab_prev = schedule.alpha_bars[t], schedule.alpha_bars[t - 1]
    x0 = (x_prev - np.sqrt(1.0 - ab_prev) * eps_pred) / np.sqrt(ab_prev)
    return np.sqrt(ab_t) * x0 + np.sqrt(1.0 - ab_t) * eps_pred


def ddim_invert(x, denoiser: Denoiser, cond, schedule: NoiseSchedule):
    """Map data ``x`` to its deterministic latent ``z``.

    Step ``t`` evaluates the denoiser at the current point ``x_{t-1}`` with
    the time embedding of ``t``.  Returns ``(z, maps)`` where ``maps[k]`` holds
    the attention maps captured at inversion step ``k + 1`` (data end first).
    """
    xt = np.asarray(x, dtype=np.float64)
    maps = []
    for t in range(1, schedule.T + 1):
        eps, m = denoiser(xt, int(schedule.timesteps[t]), cond)
        maps.append(m)
        xt = ddim_inverse_step(xt, t, eps, schedule)
    return xt, maps


def ddim_sample(z, denoiser: Denoiser, cond, schedule: NoiseSchedule):
    """Deterministic sampling from ``z``; ``maps[k]`` is captured when leaving step ``T - k``.

    The last entry belongs to the final (data-end) step ``t = 1``.
    """
    xt = np.asarray(z, dtype=np.float64)
    maps = []
    for t in range(schedule.T, 0, -1):
        eps, m = denoiser(xt, int(schedule.timesteps[t]), cond)
        maps.append(m)
        xt = ddim_step(xt, t, eps, schedule)
    return xt, maps


def round_trip_rmse(x, denoiser: Denoiser, cond, schedule: NoiseSchedule) -> float:
    z, _ = ddim_invert(x, denoiser, cond, schedule)
    xr, _ = ddim_sample(z, denoiser, cond, schedule)
    return float(np.sqrt(np.mean((xr - np.asarray(x)) ** 2)))


class ConstantDenoiser:
    """State-independent predictor; inversion is then exact."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def __call__(self, x, t, cond):
        return np.broadcast_to(self.value, np.shape(x)).copy(), []


class ZeroDenoiser(ConstantDenoiser):
    def __init__(self):
        super().__init__(0.0)


class LinearToyDenoiser:
    """eps = tanh(x @ M * gain + t/T_train * b): smooth, seeded, state-dependent."""

    def __init__(self, channels: int, seed: int = 0, gain: float = 0.5, train_steps: int = 1000):
        rng = np.random.default_rng(seed)
        self.M = rng.normal(0, 1 / np.sqrt(channels), size=(channels, channels))
        self.b = rng.normal(0, 1, size=channels)
        self.gain = gain
        self.train_steps = train_steps

    def __call__(self, x, t, cond):
        xc = np.moveaxis(np.asarray(x), 0, -1)
        out = np.tanh(self.gain * xc @ self.M + (t / self.train_steps) * self.b)
        return np.moveaxis(out, -1, 0), []
