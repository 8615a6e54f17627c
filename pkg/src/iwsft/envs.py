"""Toy environments, data generators and exact-by-enumeration oracles.

The two-armed bandit and the small stochastic chain MDP have trajectory spaces
small enough to enumerate, so the RL objective ``J(theta)`` and the
importance-weighted lower bound can be evaluated exactly. The point-mass task is
a continuous-control stand-in used to exercise curation and training end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffnum
from .data import ActionSpace, Trajectory, TrajectoryDataset
from .diffnum import Layout, PolicyParams
from .objectives import WeightConfig, traj_weights_from_ratios

MAX_ENUMERATED = 10_000


class SupportViolationError(ValueError):
    pass


# -- bandit -----------------------------------------------------------------------

PULL_LEFT = 0
PULL_RIGHT = 1


@dataclass(frozen=True)
class BanditSpec:
    p_left_success: float = 0.5
    p_right_success: float = 1.0

    def __post_init__(self):
        for p in (self.p_left_success, self.p_right_success):
            if not 0.0 <= p <= 1.0:
                raise ValueError("success probabilities must lie in [0, 1]")

    state_dim = 1
    action_space = ActionSpace.discrete(2)

    def layout(self) -> Layout:
        """Two logits, no hidden layer and no bias."""
        return Layout.categorical(1, 2, hidden=(), bias=False)

    def to_chain(self) -> "ChainMDPSpec":
        # states: 0 = start, 1 = success, 2 = failure
        P = np.zeros((3, 2, 3))
        P[0, PULL_LEFT] = [0.0, self.p_left_success, 1.0 - self.p_left_success]
        P[0, PULL_RIGHT] = [0.0, self.p_right_success, 1.0 - self.p_right_success]
        P[1:, :, :] = np.eye(3)[1:, None, :]
        return ChainMDPSpec(
            horizon=1,
            transitions=P,
            terminal_reward=np.array([0.0, 1.0, 0.0]),
            initial=np.array([1.0, 0.0, 0.0]),
            encoding="constant",
        )

    def rollout_returns(self, params, episodes, rng, deterministic=False) -> np.ndarray:
        states = np.ones((episodes, 1))
        actions = diffnum.sample_actions(params, states, rng, deterministic)
        p = np.where(actions == PULL_RIGHT, self.p_right_success, self.p_left_success)
        return (rng.random(episodes) < p).astype(np.float64)


def generate_bandit_data(spec: BanditSpec, n: int, seed: int) -> TrajectoryDataset:
    """``n`` single-step episodes from the uniform reference policy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    actions = rng.integers(0, 2, size=n)
    p = np.where(actions == PULL_RIGHT, spec.p_right_success, spec.p_left_success)
    rets = (rng.random(n) < p).astype(np.float64)
    state = np.ones((1, 1))
    trajs = [Trajectory(state, actions[i : i + 1], rets[i]) for i in range(n)]
    return TrajectoryDataset(tuple(trajs), 1, ActionSpace.discrete(2))


# -- chain MDP -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainMDPSpec:
    """Finite-horizon MDP with a terminal reward.

    ``transitions[s, a, s']`` is a row-stochastic tensor. The policy acts at
    ``t = 0 .. horizon-1``; the return is ``terminal_reward[s_T]``. With
    ``encoding="time_state"`` the policy sees a one-hot of ``(t, s)`` so a linear
    softmax head is tabular; ``"constant"`` feeds a single 1.0 (bandit).
    """

    horizon: int
    transitions: np.ndarray
    terminal_reward: np.ndarray
    initial: np.ndarray
    encoding: str = "time_state"

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=np.float64)
        R = np.asarray(self.terminal_reward, dtype=np.float64)
        p0 = np.asarray(self.initial, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        if P.shape[1] < 2:
            raise ValueError("need at least two actions")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if R.shape != (P.shape[0],) or p0.shape != (P.shape[0],):
            raise ValueError("terminal_reward and initial need one entry per state")
        if np.any(p0 < 0) or not math.isclose(p0.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("initial must be a probability vector")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.encoding not in ("time_state", "constant"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "terminal_reward", R)
        object.__setattr__(self, "initial", p0)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def state_dim(self) -> int:
        return 1 if self.encoding == "constant" else self.horizon * self.n_states

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.discrete(self.n_actions)

    def layout(self) -> Layout:
        return Layout.categorical(self.state_dim, self.n_actions, hidden=(), bias=False)

    def encode(self, t, s) -> np.ndarray:
        t = np.atleast_1d(t)
        s = np.atleast_1d(s)
        n = max(t.size, s.size)
        if self.encoding == "constant":
            return np.ones((n, 1))
        out = np.zeros((n, self.state_dim))
        out[np.arange(n), np.broadcast_to(t * self.n_states + s, (n,))] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "transitions": self.transitions.tolist(),
            "terminal_reward": self.terminal_reward.tolist(),
            "initial": self.initial.tolist(),
            "encoding": self.encoding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainMDPSpec":
        return cls(int(d["horizon"]), np.array(d["transitions"]), np.array(d["terminal_reward"]),
                   np.array(d["initial"]), d.get("encoding", "time_state"))

    @classmethod
    def random(cls, n_states: int = 3, horizon: int = 3, seed: int = 0, n_actions: int = 2) -> "ChainMDPSpec":
        """Dirichlet transitions, uniform [0, 1] terminal rewards, start in state 0."""
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        R = rng.uniform(0.0, 1.0, size=n_states)
        p0 = np.zeros(n_states)
        p0[0] = 1.0
        return cls(horizon, P, R, p0)

    def rollout_returns(self, params, episodes, rng, deterministic=False) -> np.ndarray:
        s = _categorical_draw(np.broadcast_to(self.initial, (episodes, self.n_states)), rng)
        for t in range(self.horizon):
            a = diffnum.sample_actions(params, self.encode(t, s), rng, deterministic)
            s = _categorical_draw(self.transitions[s, a], rng)
        return self.terminal_reward[s].copy()


def _categorical_draw(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(p.shape[0])
    return np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)


def generate_chain_data(spec: ChainMDPSpec, n: int, seed: int) -> TrajectoryDataset:
    """``n`` episodes under the uniform random policy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    T = spec.horizon
    s = _categorical_draw(np.broadcast_to(spec.initial, (n, spec.n_states)), rng)
    states = np.zeros((n, T, spec.state_dim))
    actions = np.zeros((n, T), dtype=np.int64)
    for t in range(T):
        states[:, t] = spec.encode(t, s)
        actions[:, t] = rng.integers(0, spec.n_actions, size=n)
        s = _categorical_draw(spec.transitions[s, actions[:, t]], rng)
    rets = spec.terminal_reward[s]
    trajs = [Trajectory(states[i], actions[i], rets[i]) for i in range(n)]
    return TrajectoryDataset(tuple(trajs), spec.state_dim, spec.action_space)


@dataclass(frozen=True)
class Enumeration:
    """Every trajectory of a chain MDP with its environment probability.

    ``env_prob[j]`` is ``p(s_0) prod_t p(s_{t+1}|s_t,a_t)``, the policy-free part
    of the trajectory probability.
    """

    trajectories: tuple[Trajectory, ...]
    env_prob: np.ndarray
    returns: np.ndarray
    packed: diffnum.Packed

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(zip(self.trajectories, self.env_prob))


def enumerate_trajectories(spec: ChainMDPSpec | BanditSpec) -> Enumeration:
    """All positive-probability (action sequence, transition outcome) paths."""
    if isinstance(spec, BanditSpec):
        spec = spec.to_chain()
    S, A, T = spec.n_states, spec.n_actions, spec.horizon
    upper = int(np.count_nonzero(spec.initial)) * (S * A) ** T
    if upper > MAX_ENUMERATED:
        raise ValueError(f"trajectory space too large to enumerate ({upper} > {MAX_ENUMERATED})")
    trajs, probs = [], []

    def expand(t, s, prob, ss, aa):
        if t == T:
            states = np.concatenate([spec.encode(k, sk) for k, sk in enumerate(ss)])
            trajs.append(Trajectory(states, np.array(aa, dtype=np.int64), spec.terminal_reward[s]))
            probs.append(prob)
            return
        for a in range(A):
            for s2 in range(S):
                p = spec.transitions[s, a, s2]
                if p > 0.0:
                    expand(t + 1, s2, prob * p, ss + [s], aa + [a])

    for s0 in range(S):
        if spec.initial[s0] > 0.0:
            expand(0, s0, spec.initial[s0], [], [])
    return Enumeration(
        tuple(trajs), np.array(probs), np.array([t.ret for t in trajs]), diffnum.pack(trajs)
    )


def _as_enum(spec) -> Enumeration:
    return spec if isinstance(spec, Enumeration) else enumerate_trajectories(spec)


def exact_J(theta: PolicyParams, spec) -> float:
    """Expected return by summation over the enumerated trajectory space."""
    E = _as_enum(spec)
    lp = diffnum.traj_log_probs(theta, E.packed)
    return float(np.sum(E.env_prob * np.exp(lp) * E.returns))


def exact_bound(
    theta: PolicyParams,
    theta_q: PolicyParams,
    theta_ref: PolicyParams,
    spec,
    cfg: WeightConfig | None = None,
) -> float:
    """Exact importance-weighted lower bound on ``J(theta)``, constant term included.

    ``E_ref[ w (1 + log(p / (w * pi_ref))) R ]`` where ``w`` is the trajectory
    weight ``q / pi_ref``: exact when ``cfg`` is None, otherwise the clipped or
    smoothed weight ``cfg`` produces. With ``theta_q == theta_ref`` this is the
    SFT bound. Requires non-negative returns.
    """
    E = _as_enum(spec)
    if np.any(E.returns < 0):
        raise ValueError("the bound requires non-negative returns")
    lp = diffnum.traj_log_probs(theta, E.packed)
    lr = diffnum.traj_log_probs(theta_ref, E.packed)
    if np.any((np.exp(lr) == 0.0) & (np.exp(lp) > 0.0) & (E.env_prob > 0)):
        raise SupportViolationError("reference policy assigns zero mass where the policy does not")
    if cfg is None:
        logw = diffnum.traj_log_probs(theta_q, E.packed) - lr
        w = np.exp(logw)
    else:
        rho = diffnum.batch_log_prob(theta_q, E.packed.states, E.packed.actions) - diffnum.batch_log_prob(
            theta_ref, E.packed.states, E.packed.actions
        )
        w = traj_weights_from_ratios(rho, E.packed.offsets, cfg)
        logw = np.log(w)
    return float(np.sum(E.env_prob * np.exp(lr) * E.returns * w * (1.0 + (lp - lr - logw))))


def sft_bound(theta: PolicyParams, theta_ref: PolicyParams, spec) -> float:
    return exact_bound(theta, theta_ref, theta_ref, spec)


def exact_kl(theta: PolicyParams, theta_ref: PolicyParams, spec) -> float:
    """``KL(p(.; theta) || pi_ref)`` over trajectories."""
    E = _as_enum(spec)
    lp = diffnum.traj_log_probs(theta, E.packed)
    lr = diffnum.traj_log_probs(theta_ref, E.packed)
    p = E.env_prob * np.exp(lp)
    return float(np.sum(p * (lp - lr)))


def kl_ball_probes(
    theta_ref: PolicyParams, spec, n: int, radius: float = 0.1, seed: int = 0
) -> list[tuple[PolicyParams, float]]:
    """``n`` random parameter vectors with trajectory KL to ``theta_ref`` at most ``radius``.

    Each probe picks a random direction and a target KL uniform in
    ``(0, radius]``, then bisects the step length along that ray.
    """
    E = _as_enum(spec)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        d = rng.standard_normal(len(theta_ref))
        d /= np.linalg.norm(d)
        target = radius * (1.0 - rng.random())
        at = lambda s: theta_ref.replace(theta_ref.values + s * d)  # noqa: E731
        hi = 1.0
        while exact_kl(at(hi), theta_ref, E) < target and hi < 1e6:
            hi *= 2.0
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if exact_kl(at(mid), theta_ref, E) <= target:
                lo = mid
            else:
                hi = mid
        theta = at(lo)
        out.append((theta, exact_kl(theta, theta_ref, E)))
    return out


# -- point mass -----------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassEnv:
    """2-D point mass driven by clipped velocity commands towards a fixed goal.

    Reward per step is minus the distance to the goal after moving.
    """

    horizon: int = 50
    dt: float = 0.1
    start: tuple[float, float] = (0.0, 0.0)
    goal: tuple[float, float] = (1.0, 1.0)
    max_action: float = 1.0
    start_spread: float = 0.0

    state_dim = 2
    action_space = ActionSpace.continuous(2)

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pos = np.broadcast_to(np.asarray(self.start, dtype=np.float64), (n, 2)).copy()
        if self.start_spread > 0:
            pos += self.start_spread * rng.uniform(-1.0, 1.0, size=(n, 2))
        return pos

    def step(self, pos: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(next_pos, executed_action, reward)``."""
        a = np.clip(action, -self.max_action, self.max_action)
        nxt = pos + self.dt * a
        return nxt, a, -np.linalg.norm(nxt - np.asarray(self.goal), axis=1)

    def layout(self, hidden: Sequence[int] = (256, 256)) -> Layout:
        return Layout.gaussian(2, 2, hidden=hidden)

    def rollout_returns(self, params, episodes, rng, deterministic=False) -> np.ndarray:
        pos = self.reset(episodes, rng)
        ret = np.zeros(episodes)
        for _ in range(self.horizon):
            a = diffnum.sample_actions(params, pos, rng, deterministic)
            pos, _, r = self.step(pos, a)
            ret += r
        return ret


def scripted_action(env: PointMassEnv, pos: np.ndarray, gain: float) -> np.ndarray:
    return gain * (np.asarray(env.goal) - pos)


def generate_pointmass_data(
    n: int,
    controller_noise: float,
    seed: int,
    env: PointMassEnv | None = None,
    gain: float = 0.5,
) -> TrajectoryDataset:
    """Episodes from a proportional controller with Gaussian action noise.

    The recorded action is the one actually executed (after clipping). The
    return is minus the summed distance to the goal, so it is dense and
    varies continuously with the noise realisation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    env = env or PointMassEnv()
    rng = np.random.default_rng(seed)
    pos = env.reset(n, rng)
    states = np.zeros((n, env.horizon, 2))
    actions = np.zeros((n, env.horizon, 2))
    ret = np.zeros(n)
    for t in range(env.horizon):
        states[:, t] = pos
        cmd = scripted_action(env, pos, gain) + controller_noise * rng.standard_normal((n, 2))
        pos, actions[:, t], r = env.step(pos, cmd)
        ret += r
    trajs = [Trajectory(states[i], actions[i], ret[i]) for i in range(n)]
    return TrajectoryDataset(tuple(trajs), 2, ActionSpace.continuous(2))


# -- evaluation -------------------------------------------------------------------------


def mc_return(params: PolicyParams, env, episodes: int, seed: int, deterministic: bool = False) -> tuple[float, float]:
    """Monte-Carlo mean return and its standard error."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    rets = env.rollout_returns(params, episodes, rng, deterministic)
    std = float(rets.std(ddof=1)) if episodes > 1 else 0.0
    return float(rets.mean()), std / math.sqrt(episodes)


__all__ = [
    "BanditSpec",
    "ChainMDPSpec",
    "Enumeration",
    "PointMassEnv",
    "PULL_LEFT",
    "PULL_RIGHT",
    "SupportViolationError",
    "enumerate_trajectories",
    "exact_J",
    "exact_bound",
    "exact_kl",
    "generate_bandit_data",
    "generate_chain_data",
    "generate_pointmass_data",
    "kl_ball_probes",
    "mc_return",
    "sft_bound",
]
