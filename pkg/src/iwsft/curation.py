"""Building filtered and quality-binned datasets, and sampling from them."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import CuratedDataset, Trajectory, TrajectoryDataset, percentile


class EmptyCuratedSetError(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("empty curated set" + (f": {detail}" if detail else ""))


def _multiset(ds: TrajectoryDataset, thresholds: Sequence[float]) -> list[tuple[int, int]]:
    rets = ds.returns
    counts = np.zeros(len(ds), dtype=np.int64)
    for a in thresholds:
        counts += rets > a  # strict: ties at the threshold are excluded
    return [(int(i), int(counts[i])) for i in np.flatnonzero(counts)]


def filter_binary(ds: TrajectoryDataset, threshold: float = 0.0) -> CuratedDataset:
    """Keep every trajectory whose return strictly exceeds ``threshold``."""
    entries = _multiset(ds, [threshold])
    if not entries:
        raise EmptyCuratedSetError(f"no return exceeds {threshold}")
    return CuratedDataset(ds, tuple(entries), (float(threshold),))


def curate_quality(ds: TrajectoryDataset, percentile_cutoffs: Sequence[float]) -> CuratedDataset:
    """Union of overlapping top-percentile bins as a multiset.

    For each percentile ``c`` the return threshold ``a = percentile(returns, c)``
    is computed and every trajectory with ``ret > a`` joins that bin. A
    trajectory's multiplicity is the number of bins containing it.
    """
    cuts = [float(c) for c in percentile_cutoffs]
    if not cuts:
        raise ValueError("need at least one percentile cutoff")
    if any(not 0.0 < c <= 100.0 for c in cuts):
        raise ValueError("percentile cutoffs must lie in (0, 100]")
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ValueError("percentile cutoffs must be strictly increasing")
    rets = ds.returns
    thresholds = [percentile(rets, c) for c in cuts]
    if not (rets > thresholds[-1]).any():
        raise EmptyCuratedSetError(f"top bin (percentile {cuts[-1]:g}) is empty")
    entries = _multiset(ds, thresholds)
    return CuratedDataset(ds, tuple(entries), tuple(thresholds), tuple(cuts))


def sample_indices(
    cd: CuratedDataset,
    batch_size: int,
    rng: int | np.random.Generator,
    proportional: bool = True,
) -> np.ndarray:
    """Source indices of ``batch_size`` i.i.d. draws with replacement.

    With ``proportional`` the draw probability is multiplicity / total
    multiplicity; otherwise every entry is equally likely. Both paths go
    through the same generator call so equal probabilities give equal draws.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(cd) == 0:
        raise EmptyCuratedSetError()
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    mult = cd.multiplicities.astype(np.float64)
    if not proportional:
        mult = np.ones_like(mult)
    picks = gen.choice(len(cd), size=batch_size, replace=True, p=mult / mult.sum())
    return cd.indices[picks]


def sample_batch(
    cd: CuratedDataset,
    batch_size: int,
    rng_seed: int | np.random.Generator,
    proportional: bool = True,
) -> list[Trajectory]:
    idx = sample_indices(cd, batch_size, rng_seed, proportional)
    return [cd.source[i] for i in idx]
