from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from iwsft.curation import EmptyCuratedSetError, curate_quality, filter_binary, sample_batch, sample_indices
from iwsft.data import CuratedDataset, percentile
from iwsft.envs import PULL_RIGHT, BanditSpec, generate_bandit_data

from conftest import returns_dataset
from oracles import brute_curate

RETURNS_1_100 = [float(r) for r in range(1, 101)]


def test_binary_bandit_ratio_two_to_one():
    ds = generate_bandit_data(BanditSpec(), 10_000, seed=0)
    cd = filter_binary(ds, 0.0)
    acts = Counter(int(t.actions[0]) for t in cd.trajectories())
    assert acts[PULL_RIGHT] / acts[1 - PULL_RIGHT] == pytest.approx(2.0, abs=0.1)


def test_binary_all_below_threshold():
    with pytest.raises(EmptyCuratedSetError, match="empty curated set"):
        filter_binary(returns_dataset([0.0, -1.0]), 0.0)


def test_binary_direct_threshold():
    cd = filter_binary(returns_dataset([1.0, 2.0, 3.0]), 1.5)
    assert cd.entries == ((1, 1), (2, 1))


def test_quality_1_to_100_against_oracle():
    oracle = brute_curate(RETURNS_1_100, [90, 95, 98])
    # frozen oracle output: thresholds 90.1, 95.05, 98.02
    sizes = [sum(1 for m in oracle.values() if m >= c) for c in (1, 2, 3)]
    assert sizes == [10, 5, 2]
    assert oracle[98] == 3 and oracle[99] == 3 and oracle[97] == 2
    cd = curate_quality(returns_dataset(RETURNS_1_100), [90, 95, 98])
    assert dict(cd.entries) == oracle
    assert cd.bin_sizes() == sizes
    assert cd.cutoffs == pytest.approx((90.1, 95.05, 98.02), abs=1e-12)


def test_single_cutoff_equals_binary_at_median():
    rng = np.random.default_rng(3)
    ds = returns_dataset(rng.normal(size=101))
    q = curate_quality(ds, [50])
    b = filter_binary(ds, percentile(ds.returns, 50))
    assert q.entries == b.entries and q.cutoffs == b.cutoffs


@pytest.mark.parametrize("cutoffs", [[50], [90, 95, 98], [100]])
def test_constant_returns_raise(cutoffs):
    with pytest.raises(EmptyCuratedSetError):
        curate_quality(returns_dataset([2.0] * 20), cutoffs)


@pytest.mark.parametrize("cutoffs", [[], [0], [101], [95, 90], [90, 90]])
def test_invalid_cutoffs(cutoffs):
    with pytest.raises(ValueError):
        curate_quality(returns_dataset(RETURNS_1_100), cutoffs)


returns_strategy = st.lists(st.integers(-20, 20).map(float), min_size=2, max_size=60)
cutoffs_strategy = st.lists(st.floats(1, 99), min_size=1, max_size=4, unique=True).map(sorted)


@settings(max_examples=100, deadline=None)
@given(returns_strategy, cutoffs_strategy)
def test_quality_matches_oracle_and_nests(returns, cutoffs):
    oracle = brute_curate(returns, cutoffs)
    ds = returns_dataset(returns)
    top_nonempty = max(returns) > percentile(returns, cutoffs[-1])
    if not top_nonempty:
        with pytest.raises(EmptyCuratedSetError):
            curate_quality(ds, cutoffs)
        return
    cd = curate_quality(ds, cutoffs)
    assert dict(cd.entries) == oracle
    assert cd.is_consistent()
    # nestedness: a later bin is a subset of an earlier one
    bins = [{i for i in range(len(returns)) if returns[i] > a} for a in cd.cutoffs]
    for lo, hi in zip(bins, bins[1:]):
        assert hi <= lo


@settings(max_examples=50, deadline=None)
@given(returns_strategy, st.floats(1, 99))
def test_single_cutoff_equivalence_property(returns, c):
    ds = returns_dataset(returns)
    try:
        q = curate_quality(ds, [c])
    except EmptyCuratedSetError:
        with pytest.raises(EmptyCuratedSetError):
            filter_binary(ds, percentile(returns, c))
        return
    assert q.entries == filter_binary(ds, percentile(returns, c)).entries


def _two_entry():
    ds = returns_dataset([1.0, 2.0])
    return CuratedDataset(ds, ((0, 1), (1, 2)), (0.5, 1.5))


def test_sampling_frequency_two_thirds():
    idx = sample_indices(_two_entry(), 30_000, 0)
    assert np.mean(idx == 1) == pytest.approx(2 / 3, abs=0.01)


def test_sampling_single_entry():
    ds = returns_dataset([0.0, 5.0])
    cd = filter_binary(ds, 1.0)
    assert all(t is ds[1] for t in sample_batch(cd, 100, 1))


def test_sampling_same_seed_same_batches():
    cd = curate_quality(returns_dataset(RETURNS_1_100), [90, 95, 98])
    a = [sample_indices(cd, 64, 7) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    g1, g2 = np.random.default_rng(9), np.random.default_rng(9)
    for _ in range(5):
        assert np.array_equal(sample_indices(cd, 16, g1), sample_indices(cd, 16, g2))


def test_sampling_uniform_when_not_proportional():
    idx = sample_indices(_two_entry(), 30_000, 0, proportional=False)
    assert np.mean(idx == 1) == pytest.approx(0.5, abs=0.01)


def test_sampling_chi_square():
    cd = curate_quality(returns_dataset(RETURNS_1_100), [90, 95, 98])
    n = 100_000
    idx = sample_indices(cd, n, 2024)
    counts = np.array([np.sum(idx == i) for i in cd.indices])
    expected = n * cd.multiplicities / cd.multiplicities.sum()
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_sampling_rejects_bad_batch():
    with pytest.raises(ValueError):
        sample_indices(_two_entry(), 0, 0)
