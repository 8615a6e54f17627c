"""Importance-weighted supervised fine-tuning (iw-SFT) and its relatives.

SFT on filtered data, quality-sampled SFT(Q), and importance-weighted
iw-SFT / iw-SFT(Q), with dataset curation, a lagged auxiliary policy and
enumerable toy environments for exact checks of the lower bounds.
"""

from .curation import EmptyCuratedSetError, curate_quality, filter_binary, sample_batch
from .data import (
    ActionSpace,
    CuratedDataset,
    Step,
    Trajectory,
    TrajectoryDataset,
    dataset_stats,
)
from .diffnum import Layout, PolicyParams, ema_update, log_prob, log_prob_grad, traj_log_prob
from .kernels import BACKEND
from .objectives import Mode, WeightConfig, iw_sft_loss, loss_for, sft_loss, step_log_ratios, traj_weight
from .trainer import TrainConfig, lr_at, pretrain_bc, train

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "BACKEND",
    "CuratedDataset",
    "EmptyCuratedSetError",
    "Layout",
    "Mode",
    "PolicyParams",
    "Step",
    "TrainConfig",
    "Trajectory",
    "TrajectoryDataset",
    "WeightConfig",
    "curate_quality",
    "dataset_stats",
    "ema_update",
    "filter_binary",
    "iw_sft_loss",
    "log_prob",
    "log_prob_grad",
    "loss_for",
    "lr_at",
    "pretrain_bc",
    "sample_batch",
    "sft_loss",
    "step_log_ratios",
    "traj_log_prob",
    "traj_weight",
    "train",
]
