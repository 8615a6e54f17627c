"""SFT, SFT(Q), iw-SFT and iw-SFT(Q) losses.

All losses are negated likelihood objectives meant for minimisation. Importance
weights ``q(tau) / pi_ref(tau)`` are built from per-step log-ratios between a
lagged policy ``theta_q`` and the reference ``theta_ref`` and are treated as
constants: no gradient flows through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import diffnum, kernels
from .curation import sample_indices
from .data import CuratedDataset, Trajectory
from .diffnum import Packed, PolicyParams


class DegenerateWeightsError(ValueError):
    def __init__(self):
        super().__init__("degenerate weights: every trajectory weight is zero")


class Mode(str, Enum):
    SFT = "SFT"
    SFT_Q = "SFT_Q"
    IW_SFT = "IW_SFT"
    IW_SFT_Q = "IW_SFT_Q"

    @property
    def weighted(self) -> bool:
        return self in (Mode.IW_SFT, Mode.IW_SFT_Q)

    @property
    def proportional(self) -> bool:
        """Whether batches are drawn proportionally to quality multiplicity."""
        return self in (Mode.SFT_Q, Mode.IW_SFT_Q)


@dataclass(frozen=True)
class WeightConfig:
    """How trajectory importance weights are formed.

    ``temperature``: ``w = exp(k * sum_i rho_i)``, optionally with each
    ``rho_i`` first clipped to ``rho_clip``; capped at ``weight_cap``.
    With ``k_mode="mean"`` the constant is ``k / (number of unmasked steps)``,
    i.e. ``k`` times the averaged log-ratio; ``k_mode="fixed"`` uses ``k`` as is.

    ``per_step_clip``: each step ratio is clipped to ``[alpha_min, alpha_max]``
    (in log space), then the product is clipped to ``[beta_min, beta_max]``.
    """

    scheme: str = "temperature"
    alpha_min: float = 0.2
    alpha_max: float = 1.8
    beta_min: float = 0.1
    beta_max: float = 10.0
    k_mode: str = "mean"
    k: float = 1.0
    rho_clip: tuple[float, float] | None = None
    normalize_batch: bool = False
    weight_cap: float = 1e6

    def __post_init__(self):
        if self.scheme not in ("temperature", "per_step_clip"):
            raise ValueError(f"unknown weight scheme {self.scheme!r}")
        if not 0.0 < self.alpha_min <= 1.0 <= self.alpha_max:
            raise ValueError("need 0 < alpha_min <= 1 <= alpha_max")
        if not 0.0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if self.k_mode not in ("mean", "fixed"):
            raise ValueError(f"unknown k_mode {self.k_mode!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.rho_clip is not None:
            lo, hi = self.rho_clip
            if lo > hi:
                raise ValueError("rho_clip lower bound exceeds upper bound")
            object.__setattr__(self, "rho_clip", (float(lo), float(hi)))
        if self.weight_cap <= 0:
            raise ValueError("weight_cap must be positive")


def resolve_k(cfg: WeightConfig, lengths: np.ndarray) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.float64)
    if cfg.k_mode == "mean":
        return cfg.k / lengths
    return np.full(lengths.shape, float(cfg.k))


def step_log_ratios(traj: Trajectory, theta_q: PolicyParams, theta_ref: PolicyParams) -> np.ndarray:
    """``log pi_q(a|s) - log pi_ref(a|s)`` at every unmasked step."""
    states, actions = traj.masked()
    return diffnum.batch_log_prob(theta_q, states, actions) - diffnum.batch_log_prob(theta_ref, states, actions)


def batch_log_ratios(packed: Packed, theta_q: PolicyParams, theta_ref: PolicyParams) -> np.ndarray:
    return diffnum.batch_log_prob(theta_q, packed.states, packed.actions) - diffnum.batch_log_prob(
        theta_ref, packed.states, packed.actions
    )


def traj_weights_from_ratios(rho: np.ndarray, offsets: np.ndarray, cfg: WeightConfig) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    if cfg.scheme == "per_step_clip":
        return kernels.trajectory_weights(
            rho, offsets, 1.0, math.log(cfg.alpha_min), math.log(cfg.alpha_max), cfg.beta_min, cfg.beta_max
        )
    lo, hi = cfg.rho_clip if cfg.rho_clip is not None else (-math.inf, math.inf)
    k = resolve_k(cfg, np.diff(offsets))
    return kernels.trajectory_weights(rho, offsets, k, lo, hi, 0.0, cfg.weight_cap)


def traj_weight(rho: Sequence[float], cfg: WeightConfig) -> float:
    """Weight of a single trajectory from its per-step log-ratios."""
    rho = np.asarray(rho, dtype=np.float64)
    return float(traj_weights_from_ratios(rho, np.array([0, rho.size]), cfg)[0])


def _as_packed(batch) -> Packed:
    if isinstance(batch, Packed):
        return batch
    return diffnum.pack(list(batch))


def _weighted_nll(theta: PolicyParams, packed: Packed, weights: np.ndarray, z: float) -> tuple[float, np.ndarray]:
    coef = weights / z
    logp, grad = diffnum.log_prob_and_grad(theta, packed.states, packed.actions, np.repeat(coef, packed.lengths))
    traj_lp = kernels.segment_sum(logp, packed.offsets)
    return -float(coef @ traj_lp), -grad


def sft_loss(batch, theta: PolicyParams) -> tuple[float, np.ndarray]:
    """``-(1/b) sum_j log p(tau_j; theta)`` and its gradient."""
    packed = _as_packed(batch)
    b = len(packed)
    return _weighted_nll(theta, packed, np.ones(b), float(b))


def compute_weights(packed: Packed, theta_q: PolicyParams, theta_ref: PolicyParams, cfg: WeightConfig) -> np.ndarray:
    rho = batch_log_ratios(packed, theta_q, theta_ref)
    return traj_weights_from_ratios(rho, packed.offsets, cfg)


def iw_sft_loss(
    batch,
    theta: PolicyParams,
    theta_q: PolicyParams,
    theta_ref: PolicyParams,
    cfg: WeightConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Importance-weighted negative log-likelihood.

    Returns ``(loss, grad, weights)`` with
    ``loss = -(1/Z) sum_j w_j log p(tau_j; theta)``, ``Z = b`` or ``sum_j w_j``
    when ``cfg.normalize_batch``.
    """
    if theta_q.layout != theta.layout or theta_ref.layout != theta.layout:
        raise diffnum.LayoutMismatchError("theta, theta_q and theta_ref must share a layout")
    packed = _as_packed(batch)
    w = compute_weights(packed, theta_q, theta_ref, cfg)
    total = float(w.sum())
    if not total > 0.0:
        raise DegenerateWeightsError()
    z = total if cfg.normalize_batch else float(len(packed))
    loss, grad = _weighted_nll(theta, packed, w, z)
    return loss, grad, w


def loss_for(
    curated: CuratedDataset,
    mode: Mode | str,
    theta: PolicyParams,
    batch_size: int,
    rng: int | np.random.Generator,
    theta_q: PolicyParams | None = None,
    theta_ref: PolicyParams | None = None,
    cfg: WeightConfig | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Draw a batch for ``mode`` and evaluate its loss.

    The ``_Q`` modes sample proportionally to multiplicity; the others sample
    entries uniformly. Returns ``(loss, grad, weights)``; weights are ones
    for the unweighted modes.
    """
    mode = Mode(mode)
    idx = sample_indices(curated, batch_size, rng, proportional=mode.proportional)
    packed = diffnum.pack([curated.source[i] for i in idx])
    if not mode.weighted:
        loss, grad = sft_loss(packed, theta)
        return loss, grad, np.ones(len(packed))
    if theta_q is None or theta_ref is None:
        raise ValueError(f"{mode.value} needs theta_q and theta_ref")
    return iw_sft_loss(packed, theta, theta_q, theta_ref, cfg or WeightConfig())
