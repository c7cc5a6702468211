"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.per_param, key=self.per_param.get) if self.per_param else "-"
        return f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tol:g}, worst {worst}, {self.n_coords} coords)"


def _value(out) -> float:
    return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    step: float = 1e-3,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients of ``f`` against central differences.

    The error of a parameter tensor is ``max|analytic - numeric|`` over the
    checked coordinates divided by the larger of the two gradients' max
    magnitude (at least ``floor``), so coordinates with tiny gradients are
    judged against the scale of their tensor.  ``max_coords`` samples that
    many coordinates per tensor instead of checking all of them.
    """
    if isinstance(params, Mapping):
        named = dict(params)
    else:
        named = {f"p{i}": p for i, p in enumerate(params)}
    rng = rng or np.random.default_rng(0)

    for p in named.values():
        p.grad = None
    loss = f()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}

    per_param: dict[str, float] = {}
    total = 0
    with no_grad():
        for name, p in named.items():
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            num = np.empty(coords.size)
            for j, i in enumerate(coords):
                orig = flat[i]
                flat[i] = orig + step
                fp = _value(f())
                flat[i] = orig - step
                fm = _value(f())
                flat[i] = orig
                num[j] = (fp - fm) / (2 * step)
            ana = analytic[name].reshape(-1)[coords]
            denom = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), floor)
            per_param[name] = float(np.abs(ana - num).max(initial=0.0) / denom)
            total += coords.size
    worst = max(per_param.values(), default=0.0)
    return GradCheckReport(worst, worst <= tol, tol, per_param, total)
