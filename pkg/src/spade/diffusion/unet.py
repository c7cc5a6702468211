"""UNet-lite: three patch-mixing resolution levels, one cross-attention layer each.

Level 0 mixes single pixels, levels 1 and 2 merge 2x2 token blocks of the
level below.  Each level predicts its share of eps through a per-token head
that is unpatchified back to pixels.  The feature pyramid concatenates every
level's output, nearest-upsampled to the grid resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ContractError
from ..tensor import Module, ParamInit, Tensor, no_grad, ops
from ..tensor.nn import Linear


@dataclass(frozen=True)
class UNetConfig:
    channels: int = 3
    height: int = 32
    width: int = 32
    widths: tuple[int, int, int] = (16, 16, 16)
    d_cond: int = 16
    d_att: int = 16
    n_temb: int = 8
    train_steps: int = 1000
    activation: str = "gelu_tanh"
    out_gain: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class FeaturePyramid:
    """Per-pixel features ``[B, H*W, sum(widths)]`` plus the level split."""

    features: Tensor
    level_widths: tuple[int, ...]
    height: int
    width: int


def time_embedding(t: float, n: int, train_steps: int) -> np.ndarray:
    half = n // 2
    freqs = np.exp(np.linspace(0.0, np.log(100.0), half))
    phase = (t / train_steps) * freqs * np.pi
    return np.concatenate([np.sin(phase), np.cos(phase)])


class CrossAttention(Module):
    """Queries from spatial tokens, keys/values from conditioning tokens."""

    def __init__(self, init: ParamInit, width: int, d_cond: int, d_att: int):
        self.to_q = Linear(init, width, d_att, bias=False)
        self.to_k = Linear(init, d_cond, d_att, bias=False)
        self.to_v = Linear(init, d_cond, width, bias=False)
        self._scale = 1.0 / np.sqrt(d_att)

    def __call__(self, h, cond):
        q = self.to_q(h)
        k = self.to_k(cond)
        v = self.to_v(cond)
        attn = ops.softmax(ops.scale(ops.matmul(q, ops.swap_last(k)), self._scale), axis=-1)
        return ops.matmul(attn, v), attn


class UNetLevel(Module):
    def __init__(self, init: ParamInit, n_in: int, width: int, cfg: UNetConfig, patch: int):
        self.proj = Linear(init, n_in, width)
        self.temb = Linear(init, cfg.n_temb, width, bias=False)
        self.attn = CrossAttention(init, width, cfg.d_cond, cfg.d_att)
        self.head = Linear(init, width, cfg.channels * patch * patch, gain=cfg.out_gain)
        self._act = ops.activation(cfg.activation)

    def __call__(self, tokens, temb, cond):
        h = self._act(ops.add(self.proj(tokens), self.temb(temb)))
        delta, attn = self.attn(h, cond)
        h = ops.add(h, delta)
        return h, attn


def _merge2x2(h, hh: int, ww: int):
    b, _, c = h.shape
    x = ops.reshape(h, (b, hh // 2, 2, ww // 2, 2, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (b, (hh // 2) * (ww // 2), 4 * c))


def _unpatchify(tokens, hh: int, ww: int, p: int, c: int):
    b = tokens.shape[0]
    x = ops.reshape(tokens, (b, hh, ww, p, p, c))
    x = ops.transpose(x, (0, 5, 1, 3, 2, 4))
    return ops.reshape(x, (b, c, hh * p, ww * p))


def upsample_index(hh: int, ww: int, factor: int) -> np.ndarray:
    ys, xs = np.mgrid[0 : hh * factor, 0 : ww * factor]
    return ((ys // factor) * ww + (xs // factor)).reshape(-1)


class UNetLite(Module):
    def __init__(self, cfg: UNetConfig = UNetConfig(), seed: int = 0):
        if cfg.height % 4 or cfg.width % 4:
            raise ContractError("grid sides must be divisible by 4")
        init = ParamInit(seed)
        w0, w1, w2 = cfg.widths
        self.cfg = cfg
        self.levels = [
            UNetLevel(init, cfg.channels, w0, cfg, 1),
            UNetLevel(init, 4 * w0, w1, cfg, 2),
            UNetLevel(init, 4 * w1, w2, cfg, 4),
        ]
        self._up = [None, upsample_index(cfg.height // 2, cfg.width // 2, 2), upsample_index(cfg.height // 4, cfg.width // 4, 4)]

    @property
    def attention_layers(self) -> list[CrossAttention]:
        return [lvl.attn for lvl in self.levels]

    def __call__(self, x_t, t: float, cond):
        """Returns ``(eps_pred, attention_maps, pyramid)``.

        ``x_t`` is ``[C, H, W]`` or ``[B, C, H, W]``; ``cond`` is
        ``[n_tok, d_cond]`` or ``[B, n_tok, d_cond]``.  Attention maps are
        ``[B, positions, n_tok]`` per level (batch axis dropped for
        unbatched input).
        """
        cfg = self.cfg
        x_t = x_t if isinstance(x_t, Tensor) else Tensor._wrap(np.asarray(x_t, dtype=np.float64))
        cond = cond if isinstance(cond, Tensor) else Tensor._wrap(np.asarray(cond, dtype=np.float64))
        unbatched = x_t.ndim == 3
        if unbatched:
            x_t = ops.reshape(x_t, (1,) + x_t.shape)
        if cond.ndim == 2:
            cond = ops.reshape(cond, (1,) + cond.shape)
        if cond.shape[-2] < 1:
            raise ContractError("conditioning needs at least one token")
        b, c, H, W = x_t.shape
        temb = Tensor._wrap(time_embedding(t, cfg.n_temb, cfg.train_steps)[None, :])
        tokens = ops.reshape(ops.transpose(x_t, (0, 2, 3, 1)), (b, H * W, c))

        maps, feats = [], []
        eps = None
        hh, ww = H, W
        for k, level in enumerate(self.levels):
            if k:
                tokens = _merge2x2(tokens, hh, ww)
                hh, ww = hh // 2, ww // 2
            h, attn = level(tokens, temb, cond)
            maps.append(attn)
            p = 2**k
            part = _unpatchify(level.head(h), hh, ww, p, c)
            eps = part if eps is None else ops.add(eps, part)
            feats.append(h if k == 0 else ops.take(h, self._up[k], axis=1))
            tokens = h
        pyramid = FeaturePyramid(ops.concat(feats, axis=-1), tuple(cfg.widths), H, W)
        if unbatched:
            eps = ops.reshape(eps, (c, H, W))
            maps = [ops.reshape(m, m.shape[1:]) for m in maps]
            pyramid.features = ops.reshape(pyramid.features, pyramid.features.shape[1:])
        return eps, maps, pyramid

    def as_denoiser(self):
        """numpy adapter for ddim_invert / ddim_sample (no gradient tracking)."""

        def denoise(x, t, cond):
            with no_grad():
                eps, maps, _ = self(x, t, cond)
            return eps.data, [m.data for m in maps]

        return denoise
