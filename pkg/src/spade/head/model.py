"""Open-vocabulary panoptic scene-graph head over frozen diffusion features."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import ConfigError
from ..relation import RgtConfig, RgtStack, build_graph, similarity_matrix
from ..tensor import Module, ParamInit, Tensor, ops
from ..tensor.nn import MLP, Linear
from .classify import fused_log_probs, pool_batch, prompt_logits
from .decoder import InstanceHead, RelationHead, grid_positional_encoding

OV_MODES = ("both", "diffusion", "pooling")


@dataclass(frozen=True)
class HeadConfig:
    d: int = 32
    n_queries: int = 6
    n_layers: int = 3
    feature_dim: int = 48
    pos_freq: int = 4
    alpha: float = 0.34
    eta: float = 0.65
    sem_threshold: float = 0.5
    graph_radius: int = 1
    tau_init: float = 10.0
    ov_mode: str = "both"
    memory_pool: int = 2
    rgt: RgtConfig = field(default_factory=RgtConfig)

    def __post_init__(self):
        if self.ov_mode not in OV_MODES:
            raise ConfigError(f"ov_mode must be one of {OV_MODES}, got {self.ov_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.memory_pool < 1:
            raise ConfigError(f"memory_pool must be >= 1, got {self.memory_pool}")
        if self.rgt.d != self.d:
            object.__setattr__(self, "rgt", replace(self.rgt, d=self.d))

    @property
    def effective_alpha(self) -> float:
        return {"both": self.alpha, "diffusion": 1.0, "pooling": 0.0}[self.ov_mode]

    def to_dict(self) -> dict:
        return asdict(self)


def pool_tokens(x: np.ndarray, height: int, width: int, k: int) -> np.ndarray:
    """Average ``[..., H*W, c]`` tokens over non-overlapping ``k x k`` cells."""
    if k == 1:
        return x
    lead, c = x.shape[:-2], x.shape[-1]
    g = x.reshape(lead + (height // k, k, width // k, k, c))
    return g.mean(axis=(-4, -2)).reshape(lead + ((height // k) * (width // k), c))


def all_pairs(n: int) -> np.ndarray:
    return np.array([(i, j) for i in range(n) for j in range(n) if i != j], dtype=int).reshape(-1, 2)


@dataclass
class HeadOutput:
    H_o: Tensor
    mask_logits: Tensor
    masks: np.ndarray  # [B, N, HW] bool
    obj_logp: Tensor  # fused, [B, N, C + 1], last column = no object
    Q_hat: Tensor
    G: np.ndarray
    S: np.ndarray
    pairs: np.ndarray  # [M, 2]
    rel_logp: Tensor | None  # fused, [B, M, R + 1], last column = no relation


class SpadeHead(Module):
    def __init__(self, cfg: HeadConfig, object_bank: np.ndarray, predicate_bank: np.ndarray, height: int, width: int, seed: int = 0):
        init = ParamInit(seed)
        d = cfg.d
        self.cfg = cfg
        self._hw = (height, width)
        if height % cfg.memory_pool or width % cfg.memory_pool:
            raise ConfigError(f"grid {height}x{width} not divisible by memory_pool={cfg.memory_pool}")
        self._pos = grid_positional_encoding(height, width, cfg.pos_freq)
        self._pos_ctx = pool_tokens(self._pos, height, width, cfg.memory_pool)
        self.mem_proj = Linear(init, cfg.feature_dim + self._pos.shape[1], d)
        self.pix_proj = MLP(init, d, d, d)
        self.instance = InstanceHead(init, d, cfg.n_queries, cfg.n_layers)
        self.relation = RelationHead(init, d, cfg.n_layers)
        self.rgt = RgtStack(cfg.rgt, seed=seed + 1)
        self.obj_null = init.normal((1, d), 1.0)
        self.rel_null = init.normal((1, d), 1.0)
        clip_dim = object_bank.shape[1]
        self.pool_obj_null = init.normal((1, clip_dim), 1.0)
        self.pool_rel_null = init.normal((1, clip_dim), 1.0)
        log_tau = np.log([cfg.tau_init])
        self.log_tau_obj = init.zeros((1,))
        self.log_tau_rel = init.zeros((1,))
        self.log_tau_pool = init.zeros((1,))
        for t in (self.log_tau_obj, self.log_tau_rel, self.log_tau_pool):
            t.data[:] = log_tau
        self._obj_bank = np.asarray(object_bank, dtype=np.float64)
        self._rel_bank = np.asarray(predicate_bank, dtype=np.float64)
        if self._obj_bank.shape[1] != d or self._rel_bank.shape[1] != d:
            raise ConfigError("prompt banks must have the head width d")
        self._pairs = all_pairs(cfg.n_queries)

    @property
    def n_objects(self) -> int:
        return len(self._obj_bank)

    @property
    def n_predicates(self) -> int:
        return len(self._rel_bank)

    def _bank(self, fixed: np.ndarray, null: Tensor) -> Tensor:
        return ops.concat([Tensor._wrap(fixed), null], axis=0)

    def _tau(self, log_tau: Tensor) -> Tensor:
        return ops.exp(log_tau)

    def _pooled_logp(self, pooled: np.ndarray, nonempty: np.ndarray, fixed_bank, null, allowed) -> Tensor:
        safe = np.where(nonempty[..., None], pooled, 1.0)
        logits = prompt_logits(Tensor._wrap(safe), self._bank(fixed_bank, null), self._tau(self.log_tau_pool), allowed)
        logp = ops.log_softmax(logits, axis=-1)
        k = logp.shape[-1]
        uniform = Tensor._wrap(np.full(logp.shape, -np.log(k)))
        return ops.where(np.broadcast_to(nonempty[..., None], logp.shape).copy(), logp, uniform)

    def _project(self, f: np.ndarray, pos: np.ndarray) -> Tensor:
        pos = np.broadcast_to(pos, f.shape[:-1] + (pos.shape[1],))
        return self.mem_proj(Tensor._wrap(np.concatenate([f, pos], axis=-1)))

    def memory(self, features):
        """Returns ``(mem, pix)``: pooled decoder memory and full-resolution pixel embeddings.

        The projection is affine, so projecting pooled features equals pooling
        the projected ones.
        """
        f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
        h, w = self._hw
        pix = self.pix_proj(self._project(f, self._pos))
        if self.cfg.memory_pool == 1:
            return self._project(f, self._pos), pix
        return self._project(pool_tokens(f, h, w, self.cfg.memory_pool), self._pos_ctx), pix

    def __call__(self, features, clip_features: np.ndarray, obj_allowed=None, rel_allowed=None) -> HeadOutput:
        """``features [B, HW, feature_dim]``, ``clip_features [B, HW, d]``.

        ``obj_allowed`` / ``rel_allowed`` are boolean vectors over the real
        classes (the no-object / no-relation column is always allowed).
        """
        cfg = self.cfg
        alpha = cfg.effective_alpha
        oa = None if obj_allowed is None else np.append(np.asarray(obj_allowed, bool), True)
        ra = None if rel_allowed is None else np.append(np.asarray(rel_allowed, bool), True)

        mem, pix = self.memory(features)
        H_o, mask_logits = self.instance(mem, pix)
        masks = mask_logits.data > 0.0

        obj_diff = ops.log_softmax(prompt_logits(H_o, self._bank(self._obj_bank, self.obj_null), self._tau(self.log_tau_obj), oa), axis=-1)
        pooled, nonempty = pool_batch(clip_features, masks)
        obj_pool = self._pooled_logp(pooled, nonempty, self._obj_bank, self.pool_obj_null, oa)
        obj_logp = fused_log_probs(obj_diff, obj_pool, alpha, oa)

        b, n = masks.shape[:2]
        grids = masks.reshape(b, n, *self._hw)
        G = np.stack([build_graph(list(grids[i]), H_o.data[i], cfg.sem_threshold, cfg.graph_radius).G for i in range(b)])
        Q_hat = self.rgt(H_o, G)
        S = similarity_matrix(Q_hat.data)

        pairs = self._pairs
        rel_logp = None
        if len(pairs):
            H_r = self.relation(Q_hat, pairs, mem)
            rel_diff = ops.log_softmax(prompt_logits(H_r, self._bank(self._rel_bank, self.rel_null), self._tau(self.log_tau_rel), ra), axis=-1)
            union = masks[:, pairs[:, 0]] | masks[:, pairs[:, 1]]
            pooled_r, nonempty_r = pool_batch(clip_features, union)
            rel_pool = self._pooled_logp(pooled_r, nonempty_r, self._rel_bank, self.pool_rel_null, ra)
            rel_logp = fused_log_probs(rel_diff, rel_pool, alpha, ra)
        return HeadOutput(H_o, mask_logits, masks, obj_logp, Q_hat, G, S, pairs, rel_logp)
