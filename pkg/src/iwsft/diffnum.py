"""Small differentiable policy engine.

A policy is a tanh MLP whose output feeds either a categorical (softmax) head
or a diagonal Gaussian head with a state-independent, learned log-std. All
parameters live in one flat float64 vector described by a :class:`Layout`.
Backpropagation is written out by hand; :func:`finite_difference_grad` is the
independent check.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .data import Trajectory

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

CHECKPOINT_MAGIC = b"IWSFTCKP"


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    input_dim: int
    hidden: tuple[int, ...]
    head: str
    output_dim: int
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.head not in ("categorical", "gaussian"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer sizes must be positive")

    @classmethod
    def categorical(cls, input_dim: int, n_actions: int, hidden: Sequence[int] = (256, 256), bias: bool = True) -> "Layout":
        return cls(input_dim, tuple(hidden), "categorical", n_actions, bias)

    @classmethod
    def gaussian(cls, input_dim: int, action_dim: int, hidden: Sequence[int] = (256, 256), bias: bool = True) -> "Layout":
        return cls(input_dim, tuple(hidden), "gaussian", action_dim, bias)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def n_params(self) -> int:
        return _slices(self)[-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "head": self.head,
            "output_dim": self.output_dim,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls(int(d["input_dim"]), tuple(d["hidden"]), d["head"], int(d["output_dim"]), bool(d.get("bias", True)))


@lru_cache(maxsize=None)
def _slices(layout: Layout):
    """Offsets of every weight block: ([(w_slice, w_shape, b_slice|None), ...], log_std slice|None, total)."""
    pos = 0
    layers = []
    sizes = layout.sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = slice(pos, pos + fan_out * fan_in)
        pos = w.stop
        b = None
        if layout.bias:
            b = slice(pos, pos + fan_out)
            pos = b.stop
        layers.append((w, (fan_out, fan_in), b))
    ls = None
    if layout.head == "gaussian":
        ls = slice(pos, pos + layout.output_dim)
        pos = ls.stop
    return tuple(layers), ls, pos


def _views(layout: Layout, flat: np.ndarray):
    layers, ls, _ = _slices(layout)
    out = [(flat[w].reshape(shape), None if b is None else flat[b]) for w, shape, b in layers]
    return out, (None if ls is None else flat[ls])


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Immutable snapshot of a policy's flat parameter vector."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if v.size != self.layout.n_params:
            raise LayoutMismatchError(f"expected {self.layout.n_params} parameters, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameters must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def replace(self, values: np.ndarray) -> "PolicyParams":
        return PolicyParams(values, self.layout)

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None

    @property
    def log_std(self) -> np.ndarray | None:
        _, ls = _views(self.layout, self.values)
        return None if ls is None else np.clip(ls, LOG_STD_MIN, LOG_STD_MAX)


def init_params(layout: Layout, seed: int = 0, log_std: float = 0.0, out_scale: float = 0.01) -> PolicyParams:
    """Gaussian fan-in initialisation; the output layer starts near zero."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(layout.n_params)
    layers, ls = _views(layout, flat)
    for i, (W, _) in enumerate(layers):
        scale = 1.0 / np.sqrt(W.shape[1])
        if i == len(layers) - 1:
            scale *= out_scale
        W[...] = rng.normal(0.0, scale, size=W.shape)
    if ls is not None:
        ls[...] = log_std
    return PolicyParams(flat, layout)


def zeros(layout: Layout) -> PolicyParams:
    return PolicyParams(np.zeros(layout.n_params), layout)


# -- forward / backward -------------------------------------------------------


def _check_inputs(layout: Layout, states: np.ndarray, actions: np.ndarray):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != layout.input_dim:
        raise LayoutMismatchError(f"state dim {states.shape[-1]} does not match layout input {layout.input_dim}")
    actions = np.asarray(actions)
    if layout.head == "categorical":
        if actions.shape != (states.shape[0],):
            raise LayoutMismatchError("categorical head expects one integer action per state")
        actions = actions.astype(np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= layout.output_dim):
            raise LayoutMismatchError("action index out of range")
    else:
        if actions.shape != (states.shape[0], layout.output_dim):
            raise LayoutMismatchError(f"gaussian head expects {layout.output_dim}-dim actions")
        actions = actions.astype(np.float64)
    return states, actions


def _forward(layers, X):
    hs = [X]
    h = X
    for W, b in layers[:-1]:
        z = h @ W.T
        if b is not None:
            z += b
        h = np.tanh(z)
        hs.append(h)
    W, b = layers[-1]
    out = h @ W.T
    if b is not None:
        out += b
    return out, hs


def _backward(layers, hs, dout, grad_layers):
    d = dout
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = grad_layers[li]
        h = hs[li]
        gW[...] = d.T @ h
        if gb is not None:
            gb[...] = d.sum(axis=0)
        if li > 0:
            d = (d @ W) * (1.0 - h * h)


def forward(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    """Raw network output: logits (categorical) or action means (gaussian)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != params.layout.input_dim:
        raise LayoutMismatchError("state dim does not match layout")
    layers, _ = _views(params.layout, params.values)
    return _forward(layers, states)[0]


def _head(layout, log_std_raw, out, actions):
    if layout.head == "categorical":
        logp, dout = kernels.categorical_logp(out, actions)
        return logp, dout, None
    ls = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    logp, dmean, dls = kernels.gaussian_logp(out, ls, actions)
    # clamped components receive no gradient
    inside = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    return logp, dmean, dls * inside


def batch_log_prob(params: PolicyParams, states, actions) -> np.ndarray:
    """Per-row log pi(a|s)."""
    states, actions = _check_inputs(params.layout, states, actions)
    layers, ls = _views(params.layout, params.values)
    out, _ = _forward(layers, states)
    if params.layout.head == "categorical":
        return kernels.categorical_logp(out, actions)[0]
    return kernels.gaussian_logp(out, np.clip(ls, LOG_STD_MIN, LOG_STD_MAX), actions)[0]


def log_prob_and_grad(params: PolicyParams, states, actions, coef) -> tuple[np.ndarray, np.ndarray]:
    """Row log-probs and the gradient of ``sum_n coef[n] * log pi(a_n|s_n)``."""
    layout = params.layout
    states, actions = _check_inputs(layout, states, actions)
    coef = np.asarray(coef, dtype=np.float64)
    layers, ls = _views(layout, params.values)
    out, hs = _forward(layers, states)
    logp, dout, dls = _head(layout, ls, out, actions)
    grad = np.zeros(layout.n_params)
    grad_layers, gls = _views(layout, grad)
    _backward(layers, hs, dout * coef[:, None], grad_layers)
    if gls is not None:
        gls[...] = coef @ dls
    return logp, grad


def log_prob(params: PolicyParams, state, action) -> float:
    state = np.asarray(state, dtype=np.float64).reshape(1, -1)
    action = np.asarray(action)
    action = action.reshape(1) if params.layout.head == "categorical" else action.reshape(1, -1)
    return float(batch_log_prob(params, state, action)[0])


def log_prob_grad(params: PolicyParams, state, action) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64).reshape(1, -1)
    action = np.asarray(action)
    action = action.reshape(1) if params.layout.head == "categorical" else action.reshape(1, -1)
    return log_prob_and_grad(params, state, action, np.ones(1))[1]


# -- trajectories -------------------------------------------------------------


@dataclass(frozen=True)
class Packed:
    """Masked steps of several trajectories stacked row-wise.

    Rows ``offsets[j]:offsets[j+1]`` belong to trajectory ``j``.
    """

    states: np.ndarray
    actions: np.ndarray
    offsets: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return self.offsets.size - 1


def pack(trajs: Sequence[Trajectory]) -> Packed:
    if not trajs:
        raise ValueError("cannot pack an empty batch")
    parts = [t.masked() for t in trajs]
    lengths = np.array([s.shape[0] for s, _ in parts], dtype=np.int64)
    offsets = np.zeros(len(parts) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return Packed(
        np.concatenate([s for s, _ in parts]),
        np.concatenate([a for _, a in parts]),
        offsets,
    )


def traj_log_probs(params: PolicyParams, packed: Packed) -> np.ndarray:
    """log p(tau; theta) for each packed trajectory, policy terms only."""
    return kernels.segment_sum(batch_log_prob(params, packed.states, packed.actions), packed.offsets)


def traj_log_prob(params: PolicyParams, traj: Trajectory) -> float:
    return float(traj_log_probs(params, pack([traj]))[0])


# -- sampling -----------------------------------------------------------------


def action_probs(params: PolicyParams, states) -> np.ndarray:
    if params.layout.head != "categorical":
        raise LayoutMismatchError("action_probs needs a categorical head")
    logits = forward(params, states)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def sample_actions(params: PolicyParams, states, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
    """Draw one action per state (argmax / mean when ``deterministic``)."""
    if params.layout.head == "categorical":
        p = action_probs(params, states)
        if deterministic:
            return p.argmax(axis=1)
        u = rng.random(p.shape[0])
        return np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)
    mean = forward(params, states)
    if deterministic:
        return mean
    return mean + np.exp(params.log_std) * rng.standard_normal(mean.shape)


# -- parameter arithmetic -------------------------------------------------------


def ema_update(theta_q: PolicyParams, theta: PolicyParams, alpha: float) -> PolicyParams:
    """``alpha * theta_q + (1 - alpha) * theta``."""
    if theta_q.layout != theta.layout:
        raise LayoutMismatchError("ema_update needs identical layouts")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return PolicyParams(alpha * theta_q.values + (1.0 - alpha) * theta.values, theta.layout)


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


# -- checkpoints ----------------------------------------------------------------


def dumps_checkpoint(params: PolicyParams) -> bytes:
    header = json.dumps({"layout": params.layout.to_dict(), "n_params": len(params)}, sort_keys=True).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + params.values.astype("<f8").tobytes()


def loads_checkpoint(blob: bytes) -> PolicyParams:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a policy checkpoint")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    layout = Layout.from_dict(header["layout"])
    values = np.frombuffer(blob[12 + hlen :], dtype="<f8")
    if values.size != header["n_params"]:
        raise ValueError("checkpoint is truncated")
    return PolicyParams(values.astype(np.float64), layout)


def save_checkpoint(params: PolicyParams, path) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def load_checkpoint(path) -> PolicyParams:
    return loads_checkpoint(Path(path).read_bytes())
