"""Run configuration: one JSON document, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..head.model import OV_MODES
from ..relation.rgt import MODES as RGT_MODES
from ..scenes import MODES as SPLIT_MODES


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    n_train: int = 1000
    n_test: int = 200
    n_object_classes: int = 10
    n_objects: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.1
    balance_bands: bool = True
    split_mode: str = "closed"
    split_seed: int = 0


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 50
    train_steps: int = 1000
    widths: tuple[int, ...] = (16, 16, 16)
    d_att: int = 16
    n_temb: int = 8
    teacher_seed: int = 100
    feature_t: float = 0.0


@dataclass(frozen=True)
class CalibrationConfig:
    enabled: bool = True
    lora: bool = True
    inversion: bool = True
    rank: int = 4
    steps: int = 500
    lr: float = 1e-2
    lambda_cal: float = 1.0
    n_scenes: int = 16
    n_tok: int = 12
    teacher_step: str = "data_end"
    adapter_hidden: int = 64
    optimizer: str = "adam"


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32  # head width; also the text-embedding and conditioning width
    n_queries: int = 4
    n_layers: int = 3
    rgt_blocks: int = 8
    rgt_mode: str = "set_attention"
    lcnl: bool = True
    lcnnl: bool = True
    lcl: bool = True
    alpha: float = 0.34
    eta: float = 0.65
    sem_threshold: float = 0.5
    graph_radius: int = 1
    ov_mode: str = "both"
    memory_pool: int = 2
    tau_init: float = 10.0
    text_seed: int = 5
    encoder_seed: int = 7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    drop_at: float = 0.75
    rqc: bool = True
    lambda_rqc: float = 0.6
    lambda_mask: float = 1.0
    no_object_weight: float = 0.1
    rel_supervision: str = "selected"
    rqc_balance: bool = True
    psi_assignment: str = "hungarian"


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (50, 100)
    top_k: int = 100


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        _check(self)

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg} (line {exc.lineno})") from None

    def hash(self, keys: tuple[str, ...] | None = None) -> str:
        """Content hash of the whole config, or of the listed dotted keys only."""
        d = self.to_dict()
        if keys is not None:
            d = {k: _lookup(d, k) for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:12]

    def replace(self, **dotted) -> "RunConfig":
        """Copy with ``section.key=value`` overrides (use ``__`` for the dot in keywords)."""
        d = self.to_dict()
        for key, value in dotted.items():
            *path, leaf = key.replace("__", ".").split(".")
            node = d
            for p in path:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return RunConfig.from_dict(d)


# Keys each artifact depends on; bundles are validated against these hashes.
STAGE_KEYS = {
    "data": ("data",),
    "calibration": ("seed", "data", "diffusion", "calibration", "model.d", "model.text_seed", "model.encoder_seed"),
}


def _to_jsonable(v):
    if isinstance(v, dict):
        return {k: _to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_to_jsonable(x) for x in v]
    return v


def _lookup(d: dict, dotted: str):
    node = d
    for p in dotted.split("."):
        node = node[p]
    return node


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {where or '<root>'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name in names & set(d):
        hint, value = hints[name], d[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}{name}.")
        else:
            kwargs[name] = _coerce(hint, value, where + name)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _coerce(hint, value, key: str):
    origin = typing.get_origin(hint)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(_coerce(typing.get_args(hint)[0], v, key) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _check(cfg: RunConfig) -> None:
    m, t, c, d = cfg.model, cfg.train, cfg.calibration, cfg.data
    checks = [
        (0.0 <= m.alpha <= 1.0, f"model.alpha must lie in [0, 1], got {m.alpha}"),
        (m.ov_mode in OV_MODES, f"model.ov_mode must be one of {OV_MODES}"),
        (m.rgt_mode in RGT_MODES, f"model.rgt_mode must be one of {RGT_MODES}"),
        (d.split_mode in SPLIT_MODES, f"data.split_mode must be one of {SPLIT_MODES}"),
        (t.rel_supervision in ("selected", "all"), "train.rel_supervision must be 'selected' or 'all'"),
        (t.psi_assignment in ("hungarian", "overlap"), "train.psi_assignment must be 'hungarian' or 'overlap'"),
        (t.optimizer in ("adam", "sgd") and c.optimizer in ("adam", "sgd"), "optimizer must be 'adam' or 'sgd'"),
        (c.teacher_step in ("data_end", "noise_end"), "calibration.teacher_step must be 'data_end' or 'noise_end'"),
        (t.epochs >= 0 and c.steps >= 0, "epochs and steps must be >= 0"),
        (t.batch_size >= 1, "train.batch_size must be >= 1"),
        (m.n_queries >= 1 and m.d >= 1, "model sizes must be positive"),
        (all(k > 0 for k in cfg.eval.ks), "eval.ks must be positive"),
        (d.n_train >= 1 and d.n_test >= 1, "data sizes must be positive"),
        (1 <= c.n_scenes, "calibration.n_scenes must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
