from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal rates ``alpha_bars[t]`` for ``t = 0..T`` (``alpha_bars[0] == 1``).

    ``timesteps[t]`` is the training-time index fed to the denoiser's time
    embedding, so a respaced schedule keeps conditioning on the original clock.
    """

    alpha_bars: np.ndarray
    timesteps: np.ndarray
    train_steps: int

    def __post_init__(self):
        ab = np.asarray(self.alpha_bars, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2 or ab[0] != 1.0:
            raise ContractError("alpha_bars must start at exactly 1 and have T >= 1 steps")
        if not np.all(np.diff(ab) < 0) or ab[-1] <= 0:
            raise ContractError("alpha_bars must be strictly decreasing and positive")
        if len(self.timesteps) != ab.size:
            raise ContractError("timesteps and alpha_bars lengths differ")

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if T < 1 or not 0 < beta_start <= beta_end < 1:
            raise ContractError(f"bad linear schedule T={T}, beta=({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, T)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(ab, np.arange(T + 1), T)

    def respaced(self, steps: int) -> "NoiseSchedule":
        """Evenly strided sub-schedule with ``steps`` DDIM steps over the same process."""
        if not 1 <= steps <= self.T:
            raise ContractError(f"cannot respace {self.T} steps to {steps}")
        idx = np.round(np.linspace(0, self.T, steps + 1)).astype(int)
        return NoiseSchedule(self.alpha_bars[idx], self.timesteps[idx], self.train_steps)

    @property
    def T(self) -> int:
        return self.alpha_bars.size - 1

    @property
    def alphas(self) -> np.ndarray:
        """Per-step ``alpha_k = alpha_bar_k / alpha_bar_{k-1}`` for ``k = 1..T``."""
        return self.alpha_bars[1:] / self.alpha_bars[:-1]

    def check_t(self, t: int, lo: int = 0) -> None:
        if not lo <= t <= self.T:
            raise ContractError(f"timestep {t} outside [{lo}, {self.T}]")


def default_schedule(steps: int = 50, train_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    return NoiseSchedule.linear(train_steps, beta_start, beta_end).respaced(steps)
