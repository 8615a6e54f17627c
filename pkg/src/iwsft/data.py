"""Trajectory and dataset types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class ActionSpace:
    """Either ``discrete`` with ``n`` choices or ``continuous`` with ``dim`` components."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action space kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("action space size must be >= 1")

    @classmethod
    def discrete(cls, n: int) -> "ActionSpace":
        return cls("discrete", n)

    @classmethod
    def continuous(cls, dim: int) -> "ActionSpace":
        return cls("continuous", dim)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def to_dict(self) -> dict:
        key = "n" if self.is_discrete else "dim"
        return {"kind": self.kind, key: self.size}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpace":
        if d["kind"] == "discrete":
            return cls.discrete(int(d["n"]))
        return cls.continuous(int(d["dim"]))


@dataclass(frozen=True)
class Step:
    state: np.ndarray
    action: int | np.ndarray
    mask: int = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode stored column-wise.

    ``states`` is ``(T, state_dim)``; ``actions`` is ``(T,)`` integers for discrete
    spaces or ``(T, action_dim)`` floats for continuous ones; ``mask`` marks the
    steps that contribute to the likelihood (0 = padding). ``ret`` is the
    undiscounted return.
    """

    states: np.ndarray
    actions: np.ndarray
    ret: float
    mask: np.ndarray = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2:
            raise ValueError("states must be 2-D (T, state_dim)")
        actions = np.asarray(self.actions)
        if actions.dtype.kind in "iub":
            actions = actions.astype(np.int64)
        else:
            actions = actions.astype(np.float64)
        if actions.shape[0] != states.shape[0]:
            raise ValueError("states and actions disagree on trajectory length")
        mask = np.ones(states.shape[0], dtype=np.int8) if self.mask is None else np.asarray(self.mask)
        if mask.shape != (states.shape[0],) or not np.isin(mask, (0, 1)).all():
            raise ValueError("mask must be a 0/1 vector with one entry per step")
        if not np.isfinite(self.ret):
            raise ValueError("return must be finite")
        if int(mask.sum()) < 1:
            raise ValueError("trajectory needs at least one unmasked step")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "actions", _frozen(actions))
        object.__setattr__(self, "mask", _frozen(mask.astype(np.int8)))
        object.__setattr__(self, "ret", float(self.ret))

    @property
    def length(self) -> int:
        return int(self.mask.sum())

    @property
    def steps(self) -> list[Step]:
        acts = self.actions
        return [
            Step(self.states[t], int(acts[t]) if acts.ndim == 1 else acts[t], int(self.mask[t]))
            for t in range(self.states.shape[0])
        ]

    @property
    def is_discrete(self) -> bool:
        return self.actions.dtype.kind == "i"

    def masked(self) -> tuple[np.ndarray, np.ndarray]:
        """States and actions of the contributing steps only."""
        keep = self.mask.astype(bool)
        return self.states[keep], self.actions[keep]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.ret == other.ret
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.mask, other.mask)
            and self.actions.dtype == other.actions.dtype
        )

    __hash__ = None

    @classmethod
    def concat(cls, a: "Trajectory", b: "Trajectory") -> "Trajectory":
        return cls(
            np.concatenate([a.states, b.states]),
            np.concatenate([a.actions, b.actions]),
            a.ret + b.ret,
            np.concatenate([a.mask, b.mask]),
        )


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    trajectories: tuple[Trajectory, ...]
    state_dim: int
    action_space: ActionSpace

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("dataset must contain at least one trajectory")
        for i, t in enumerate(trajs):
            if t.states.shape[1] != self.state_dim:
                raise ValueError(f"trajectory {i}: state dim {t.states.shape[1]} != {self.state_dim}")
            if self.action_space.is_discrete:
                if not t.is_discrete or t.actions.ndim != 1:
                    raise ValueError(f"trajectory {i}: expected discrete actions")
                if t.actions.min() < 0 or t.actions.max() >= self.action_space.size:
                    raise ValueError(f"trajectory {i}: action index out of range")
            elif t.is_discrete or t.actions.ndim != 2 or t.actions.shape[1] != self.action_space.size:
                raise ValueError(f"trajectory {i}: expected {self.action_space.size}-dim continuous actions")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __getitem__(self, i: int) -> Trajectory:
        return self.trajectories[i]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.state_dim == other.state_dim
            and self.action_space == other.action_space
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.trajectories, other.trajectories))
        )

    __hash__ = None

    @property
    def returns(self) -> np.ndarray:
        return np.array([t.ret for t in self.trajectories])


@dataclass(frozen=True, eq=False)
class CuratedDataset:
    """A multiset over trajectories of ``source``.

    ``entries`` holds ``(index, multiplicity)`` pairs; the multiplicity of a
    trajectory is the number of cutoffs its return strictly exceeds.
    ``percentiles`` records the percentile levels the cutoffs came from, if any.
    """

    source: TrajectoryDataset
    entries: tuple[tuple[int, int], ...]
    cutoffs: tuple[float, ...]
    percentiles: tuple[float, ...] | None = None

    def __post_init__(self):
        entries = tuple((int(i), int(m)) for i, m in self.entries)
        cutoffs = tuple(float(c) for c in self.cutoffs)
        if not cutoffs:
            raise ValueError("at least one cutoff is required")
        # thresholds taken from percentiles of tied returns can coincide
        if any(b < a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ValueError("cutoffs must be non-decreasing")
        if any(m < 1 for _, m in entries):
            raise ValueError("multiplicities must be >= 1")
        if any(not 0 <= i < len(self.source) for i, _ in entries):
            raise ValueError("entry index out of range")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "cutoffs", cutoffs)
        if self.percentiles is not None:
            object.__setattr__(self, "percentiles", tuple(float(p) for p in self.percentiles))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.entries], dtype=np.int64)

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([m for _, m in self.entries], dtype=np.int64)

    def trajectories(self) -> list[Trajectory]:
        return [self.source[i] for i, _ in self.entries]

    def bin_sizes(self) -> list[int]:
        """Number of trajectories strictly above each cutoff."""
        rets = self.source.returns
        return [int((rets > c).sum()) for c in self.cutoffs]

    def expected_multiplicity(self, index: int) -> int:
        ret = self.source[index].ret
        return sum(ret > c for c in self.cutoffs)

    def is_consistent(self) -> bool:
        """True when the stored entries are exactly those implied by the cutoffs."""
        stored = dict(self.entries)
        for i in range(len(self.source)):
            if stored.get(i, 0) != self.expected_multiplicity(i):
                return False
        return True


@dataclass(frozen=True)
class DatasetStats:
    count: int
    min: float
    mean: float
    max: float
    percentiles: dict[float, float] = field(default_factory=dict)

    def format(self) -> str:
        pct = " ".join(f"p{q:g}={v:.6g}" for q, v in self.percentiles.items())
        return (
            f"count={self.count} min={self.min:.6g} mean={self.mean:.6g} "
            f"max={self.max:.6g} {pct}"
        )


DEFAULT_PERCENTILES = (10.0, 25.0, 50.0, 75.0, 90.0)


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile between order statistics."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q, method="linear"))


def dataset_stats(ds: TrajectoryDataset, percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> DatasetStats:
    rets = ds.returns
    if rets.size == 0:
        raise ValueError("empty dataset")
    return DatasetStats(
        count=int(rets.size),
        min=float(rets.min()),
        mean=float(rets.mean()),
        max=float(rets.max()),
        percentiles={float(q): percentile(rets, q) for q in percentiles},
    )
