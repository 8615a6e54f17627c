"""Run configuration files.

A config is one flat JSON object. Unknown keys, wrong types and invalid values
are reported as :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .objectives import Mode, WeightConfig
from .trainer import TrainConfig

SEED_ENV = "IWSFT_SEED"
GENERATE = "generate"
ENVS = ("bandit", "chain", "pointmass")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        self.key = key
        super().__init__(f"config key {key!r}: {msg}")


@dataclass(frozen=True)
class RunConfig:
    # data
    dataset: str
    env: str | None = None
    n: int = 10_000
    data_seed: int = 0
    noise: float = 0.3
    chain_states: int = 3
    chain_horizon: int = 3
    chain_seed: int = 0
    curated: str | None = None
    threshold: float | None = None
    cutoffs: list[float] | None = None
    # policy and reference
    hidden: list[int] = field(default_factory=list)
    bias: bool = True
    init_seed: int = 0
    reference: str | None = None
    pretrain_steps: int = 1000
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 32
    pretrain_init: str = "random"
    # training
    mode: str = "SFT"
    batch_size: int = 256
    total_steps: int = 1000
    warmup_steps: int = 0
    peak_lr: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    weight_decay: float = 1e-4
    q_update: str = "ema"
    ema_alpha: float = 0.99
    q_period: int = 1
    seed: int = 0
    # importance weights
    weight_scheme: str = "temperature"
    alpha_min: float = 0.2
    alpha_max: float = 1.8
    beta_min: float = 0.1
    beta_max: float = 10.0
    k_mode: str = "mean"
    k: float = 1.0
    rho_clip: list[float] | None = None
    normalize_batch: bool = False
    weight_cap: float = 1e6
    # evaluation
    eval_episodes: int = 10_000
    eval_seed: int = 12345
    eval_deterministic: bool = False
    # where relative paths resolve from
    base_dir: str = "."

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def weight_config(self) -> WeightConfig:
        return WeightConfig(
            scheme=self.weight_scheme,
            alpha_min=self.alpha_min,
            alpha_max=self.alpha_max,
            beta_min=self.beta_min,
            beta_max=self.beta_max,
            k_mode=self.k_mode,
            k=self.k,
            rho_clip=None if self.rho_clip is None else tuple(self.rho_clip),
            normalize_batch=self.normalize_batch,
            weight_cap=self.weight_cap,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=Mode(self.mode),
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            warmup_steps=self.warmup_steps,
            peak_lr=self.peak_lr,
            optimizer=self.optimizer,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            weight_decay=self.weight_decay,
            q_update=self.q_update,
            ema_alpha=self.ema_alpha,
            q_period=self.q_period,
            weight_cfg=self.weight_config(),
            seed=self.seed,
        )

    def echo(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _check_type(key: str, value: Any) -> Any:
    t = _TYPES[key]
    optional = "None" in t
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "must not be null")
    if t.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
    elif t.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        value = float(value)
    elif t.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
    elif t.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
    elif t.startswith("list"):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, f"expected a list of numbers, got {value!r}")
        value = [int(v) for v in value] if "int" in t else [float(v) for v in value]
    return value


def parse_config(raw: dict[str, Any], base_dir: str | os.PathLike = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in raw:
        if key not in _TYPES or key == "base_dir":
            raise ConfigError(key, "unknown key")
    if "dataset" not in raw:
        raise ConfigError("dataset", "missing required key")
    values = {k: _check_type(k, v) for k, v in raw.items()}
    if "seed" not in values and os.environ.get(SEED_ENV):
        try:
            values["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError("seed", f"{SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer") from None
    cfg = RunConfig(**values, base_dir=str(base_dir))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.env is not None and cfg.env not in ENVS:
        raise ConfigError("env", f"must be one of {ENVS}")
    if cfg.dataset == GENERATE:
        if cfg.env is None:
            raise ConfigError("env", f"required when dataset is {GENERATE!r}")
        if cfg.curated is not None:
            raise ConfigError("curated", "needs a dataset file, not a generated dataset")
    elif not cfg.path(cfg.dataset).is_file():
        raise ConfigError("dataset", f"no such file: {cfg.dataset}")
    if cfg.curated is not None:
        if not cfg.path(cfg.curated).is_file():
            raise ConfigError("curated", f"no such file: {cfg.curated}")
    else:
        if (cfg.threshold is None) == (cfg.cutoffs is None):
            raise ConfigError("threshold", "give exactly one of 'threshold', 'cutoffs' or 'curated'")
    if cfg.reference is not None and not cfg.path(cfg.reference).is_file():
        raise ConfigError("reference", f"no such file: {cfg.reference}")
    if cfg.pretrain_init not in ("random", "zeros"):
        raise ConfigError("pretrain_init", "must be 'random' or 'zeros'")
    if cfg.n < 1:
        raise ConfigError("n", "must be >= 1")
    if cfg.eval_episodes < 0:
        raise ConfigError("eval_episodes", "must be >= 0")
    if cfg.rho_clip is not None and len(cfg.rho_clip) != 2:
        raise ConfigError("rho_clip", "must be [low, high]")
    try:
        Mode(cfg.mode)
    except ValueError:
        raise ConfigError("mode", f"must be one of {[m.value for m in Mode]}") from None
    for key, build in (("weight_scheme", cfg.weight_config), ("mode", cfg.train_config)):
        try:
            build()
        except ValueError as exc:
            raise ConfigError(_guess_key(str(exc), key), str(exc)) from None


def _guess_key(message: str, default: str) -> str:
    for name in sorted(_TYPES, key=len, reverse=True):
        if name in message:
            return name
    return default


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(raw, base_dir=path.parent)


def bundled_config_dir() -> Path:
    return Path(__file__).parent / "configs"


def bundled_configs() -> list[Path]:
    return sorted(bundled_config_dir().glob("*.cfg"))
