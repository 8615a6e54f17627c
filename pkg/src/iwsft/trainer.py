"""Training loop for the SFT family, plus behaviour-cloning pretraining."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffnum
from .data import CuratedDataset, TrajectoryDataset
from .diffnum import Layout, PolicyParams
from .objectives import Mode, WeightConfig, loss_for, sft_loss

METRICS_HEADER = ("step", "loss", "lr", "grad_norm", "w_mean", "w_min", "w_max")


class TrainingDivergedError(RuntimeError):
    def __init__(self, record: "StepRecord", what: str):
        self.record = record
        super().__init__(f"non-finite {what} at step {record.step}: {record}")


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.SFT
    batch_size: int = 256
    total_steps: int = 1000
    warmup_steps: int = 0
    peak_lr: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    q_update: str = "ema"
    ema_alpha: float = 0.99
    q_period: int = 1
    weight_cfg: WeightConfig = field(default_factory=WeightConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.total_steps > 0 and self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be < total_steps")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.q_update not in ("ema", "periodic"):
            raise ValueError(f"unknown q_update {self.q_update!r}")
        if not 0.0 <= self.ema_alpha < 1.0:
            raise ValueError("ema_alpha must lie in [0, 1)")
        if self.q_period < 1:
            raise ValueError("q_period must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine annealing to 0 at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.peak_lr
    progress = (step - cfg.warmup_steps) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, n: int, beta1=0.9, beta2=0.95, eps=1e-8, weight_decay=0.0):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return x - lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * x)


class SGD:
    def __init__(self, n: int, weight_decay=0.0):
        self.weight_decay = weight_decay

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        return x - lr * (grad + self.weight_decay * x)


def make_optimizer(cfg: TrainConfig, n: int):
    if cfg.optimizer == "adam":
        return Adam(n, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    return SGD(n, cfg.weight_decay)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    lr: float
    grad_norm: float
    w_mean: float
    w_min: float
    w_max: float


@dataclass
class TrainResult:
    params: PolicyParams
    theta_q: PolicyParams
    metrics: list[StepRecord]

    def __iter__(self):
        # allows ``theta, log = train(...)`` unpacking
        return iter((self.params, self.metrics))


def _check_finite(record: StepRecord, grad: np.ndarray, new_values: np.ndarray | None = None):
    if not math.isfinite(record.loss):
        raise TrainingDivergedError(record, "loss")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(record, "gradient")
    if new_values is not None and not np.all(np.isfinite(new_values)):
        raise TrainingDivergedError(record, "parameters")


def train(
    ds_curated: CuratedDataset,
    theta_ref: PolicyParams,
    cfg: TrainConfig,
    on_step: Callable[[int, PolicyParams, PolicyParams], None] | None = None,
) -> TrainResult:
    """Optimise the objective selected by ``cfg.mode`` starting from ``theta_ref``.

    Each iteration draws a batch, takes one optimiser step and then refreshes
    ``theta_q`` (every step towards ``theta`` for ``ema``, a hard copy every
    ``q_period`` steps for ``periodic``). ``theta_ref`` stays frozen.
    ``on_step(i, theta, theta_q)`` is called after the refresh.
    """
    rng = np.random.default_rng(cfg.seed)
    theta = theta_ref
    theta_q = theta_ref
    opt = make_optimizer(cfg, len(theta_ref))
    metrics: list[StepRecord] = []
    for i in range(1, cfg.total_steps + 1):
        lr = lr_at(i - 1, cfg)
        loss, grad, w = loss_for(
            ds_curated, cfg.mode, theta, cfg.batch_size, rng, theta_q, theta_ref, cfg.weight_cfg
        )
        record = StepRecord(
            i, loss, lr, float(np.linalg.norm(grad)), float(w.mean()), float(w.min()), float(w.max())
        )
        _check_finite(record, grad)
        new_values = opt.step(theta.values, grad, lr)
        _check_finite(record, grad, new_values)
        theta = theta.replace(new_values)
        if cfg.q_update == "ema":
            theta_q = diffnum.ema_update(theta_q, theta, cfg.ema_alpha)
        elif i % cfg.q_period == 0:
            theta_q = theta
        metrics.append(record)
        if on_step is not None:
            on_step(i, theta, theta_q)
    return TrainResult(theta, theta_q, metrics)


def pretrain_bc(
    ds: TrajectoryDataset,
    layout: Layout,
    steps: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
    init: PolicyParams | None = None,
) -> PolicyParams:
    """Maximum-likelihood fit on every trajectory of ``ds`` (no filtering).

    Uses Adam at a constant learning rate, starting from ``init`` or a fresh
    random initialisation.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if ds.state_dim != layout.input_dim:
        raise diffnum.LayoutMismatchError("dataset state dim does not match layout")
    theta = init if init is not None else diffnum.init_params(layout, seed)
    rng = np.random.default_rng(seed)
    opt = Adam(len(theta))
    for i in range(1, steps + 1):
        idx = rng.integers(0, len(ds), size=batch_size)
        loss, grad = sft_loss([ds[j] for j in idx], theta)
        record = StepRecord(i, loss, lr, float(np.linalg.norm(grad)), 1.0, 1.0, 1.0)
        _check_finite(record, grad)
        new_values = opt.step(theta.values, grad, lr)
        _check_finite(record, grad, new_values)
        theta = theta.replace(new_values)
    return theta


def metrics_csv(records: list[StepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC-4180: CRLF line endings
    writer.writerow(METRICS_HEADER)
    for r in records:
        writer.writerow([r.step] + [repr(float(getattr(r, f.name))) for f in fields(r)[1:]])
    return buf.getvalue()


def write_metrics_csv(records: list[StepRecord], path) -> None:
    Path(path).write_bytes(metrics_csv(records).encode("utf-8"))
