"""End-to-end runs driven by a :class:`~iwsft.config.RunConfig`."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnum, envs, io
from .config import GENERATE, RunConfig
from .curation import curate_quality, filter_binary
from .data import CuratedDataset, TrajectoryDataset
from .diffnum import Layout, PolicyParams
from .kernels import BACKEND
from .trainer import StepRecord, pretrain_bc, train, write_metrics_csv


def make_env(name: str, cfg: RunConfig | None = None):
    if name == "bandit":
        return envs.BanditSpec()
    if name == "chain":
        c = cfg
        return envs.ChainMDPSpec.random(
            c.chain_states if c else 3, c.chain_horizon if c else 3, c.chain_seed if c else 0
        )
    if name == "pointmass":
        return envs.PointMassEnv()
    raise ValueError(f"unknown env {name!r}")


def generate(env, n: int, seed: int, noise: float = 0.3) -> TrajectoryDataset:
    if isinstance(env, envs.BanditSpec):
        return envs.generate_bandit_data(env, n, seed)
    if isinstance(env, envs.ChainMDPSpec):
        return envs.generate_chain_data(env, n, seed)
    return envs.generate_pointmass_data(n, noise, seed, env)


def load_data(cfg: RunConfig) -> tuple[TrajectoryDataset, CuratedDataset]:
    if cfg.dataset == GENERATE:
        ds = generate(make_env(cfg.env, cfg), cfg.n, cfg.data_seed, cfg.noise)
        source_hash = None
    else:
        ds, source_hash = io.load_dataset(cfg.path(cfg.dataset))
    if cfg.curated is not None:
        cd = io.load_curated(cfg.path(cfg.curated), ds, source_hash)
    elif cfg.cutoffs is not None:
        cd = curate_quality(ds, cfg.cutoffs)
    else:
        cd = filter_binary(ds, cfg.threshold)
    return ds, cd


def policy_layout(cfg: RunConfig, ds: TrajectoryDataset) -> Layout:
    space = ds.action_space
    head = "categorical" if space.is_discrete else "gaussian"
    return Layout(ds.state_dim, tuple(cfg.hidden), head, space.size, cfg.bias)


def reference_policy(cfg: RunConfig, ds: TrajectoryDataset, layout: Layout) -> PolicyParams:
    if cfg.reference is not None:
        ref = diffnum.load_checkpoint(cfg.path(cfg.reference))
        if ref.layout != layout:
            raise diffnum.LayoutMismatchError("reference checkpoint layout does not match the dataset/policy config")
        return ref
    init = diffnum.zeros(layout) if cfg.pretrain_init == "zeros" else diffnum.init_params(layout, cfg.init_seed)
    return pretrain_bc(
        ds, layout, cfg.pretrain_steps, cfg.pretrain_lr, cfg.pretrain_batch_size, seed=cfg.init_seed, init=init
    )


def evaluate(params: PolicyParams, env, episodes: int, seed: int, deterministic: bool = False,
             reference: PolicyParams | None = None) -> dict:
    """Monte-Carlo return, plus exact quantities for enumerable envs."""
    out: dict = {}
    if episodes > 0:
        mean, stderr = envs.mc_return(params, env, episodes, seed, deterministic)
        out.update(mc_return_mean=mean, mc_return_stderr=stderr, episodes=episodes)
    if isinstance(env, (envs.BanditSpec, envs.ChainMDPSpec)):
        E = envs.enumerate_trajectories(env)
        out["exact_J"] = envs.exact_J(params, E)
        if reference is not None:
            out["sft_bound"] = envs.sft_bound(params, reference, E)
            out["iw_bound"] = envs.exact_bound(params, params, reference, E)
    if isinstance(env, envs.BanditSpec):
        out["p_right"] = float(diffnum.action_probs(params, np.ones((1, 1)))[0, envs.PULL_RIGHT])
    return out


@dataclass
class RunResult:
    params: PolicyParams
    reference: PolicyParams
    metrics: list[StepRecord]
    summary: dict


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """Load/generate data, curate, fit the reference, train, evaluate, write outputs."""
    t0 = time.perf_counter()
    ds, cd = load_data(cfg)
    layout = policy_layout(cfg, ds)
    ref = reference_policy(cfg, ds, layout)
    result = train(cd, ref, cfg.train_config())
    summary = {
        "final_loss": result.metrics[-1].loss if result.metrics else None,
        "steps": len(result.metrics),
        "backend": BACKEND,
        "curated": {"entries": len(cd), "bin_sizes": cd.bin_sizes(), "cutoffs": list(cd.cutoffs)},
        "config": cfg.echo(),
    }
    if cfg.env is not None:
        env = make_env(cfg.env, cfg)
        summary["eval"] = evaluate(result.params, env, cfg.eval_episodes, cfg.eval_seed, cfg.eval_deterministic, ref)
        summary["eval_reference"] = evaluate(ref, env, cfg.eval_episodes, cfg.eval_seed, cfg.eval_deterministic)
    summary["wall_time_s"] = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        diffnum.save_checkpoint(result.params, out / "checkpoint.bin")
        diffnum.save_checkpoint(ref, out / "reference.bin")
        write_metrics_csv(result.metrics, out / "metrics.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")
    return RunResult(result.params, ref, result.metrics, summary)
