import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachepool import AnalyticModel, Catalog, ConfigError, predict_che, run, run_dedicated, run_separated
from cachepool.cache_sim import CacheState, MissStats, step
from cachepool.errors import BudgetExceeded

from conftest import two_flow_catalog


def trace(stream, x, sizes=None):
    names = sorted(set(stream))
    idx = {a: j for j, a in enumerate(names)}
    sizes = sizes or {}
    st_ = CacheState(len(names))
    return [step(st_, (0, idx[a], sizes.get(a, 1)), x) for a in stream]


class TestStep:
    def test_strict_boundary_two_ahead(self):
        assert trace("abca", 2) == ["miss", "miss", "miss", "hit"]

    def test_strict_boundary_one_ahead(self):
        assert trace("aba", 1) == ["miss", "miss", "hit"]

    def test_sizes_boundary(self):
        assert trace("aba", 4, {"a": 1, "b": 4}) == ["miss", "miss", "hit"]
        assert trace("aba", 3.5, {"a": 1, "b": 4}) == ["miss", "miss", "miss"]

    def test_oversized_item_always_misses_but_is_tracked(self):
        st_ = CacheState(2)
        assert step(st_, (0, 0, 5), 4) == "miss"
        assert step(st_, (0, 0, 5), 4) == "miss"
        assert step(st_, (0, 1, 1), 4) == "miss"
        assert st_.size_ahead(1) == 0 and st_.size_ahead(0) == 1

    def test_capacity_must_be_positive(self):
        with pytest.raises(ConfigError):
            step(CacheState(1), (0, 0, 1), 0)

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=300), st.lists(st.integers(1, 5), min_size=10, max_size=10))
    def test_matches_naive_list(self, stream, sizes):
        """Order and search costs agree with a plain Python MTF list, across compactions."""
        state = CacheState(10, sizes)
        naive = []
        for it in stream:
            expect = sum(sizes[j] for j in naive[: naive.index(it)]) if it in naive else math.inf
            assert state.access(it) == expect
            if it in naive:
                naive.remove(it)
            naive.insert(0, it)
            assert state.order().tolist() == naive
        for it in naive:
            assert state.size_ahead(it) == sum(sizes[j] for j in naive[: naive.index(it)])

    def test_compaction_preserves_order(self):
        state = CacheState(3, [1, 2, 3])
        seq = np.random.default_rng(0).integers(0, 3, 5000)
        for it in seq:
            state.access(int(it))
        last3 = []
        for it in seq[::-1]:
            if int(it) not in last3:
                last3.append(int(it))
        assert state.order().tolist() == last3


class TestRun:
    def test_deterministic_replay(self):
        cat = two_flow_catalog()
        a = run(cat, None, [10, 100], 200_000, warmup=1000, seed=4)
        b = run(cat, None, [10, 100], 200_000, warmup=1000, seed=4)
        np.testing.assert_array_equal(a.misses, b.misses)
        np.testing.assert_array_equal(a.requests, b.requests)

    def test_multi_capacity_nesting(self):
        cat = two_flow_catalog()
        stats = run(cat, None, [5, 50, 500, 5000], 300_000, warmup=0, seed=1)
        assert np.all(np.diff(stats.misses, axis=0) <= 0)
        assert stats.requests.sum() == 300_000

    def test_single_pass_equals_independent_runs(self):
        cat = two_flow_catalog()
        joint = run(cat, None, [20, 200], 100_000, warmup=100, seed=9)
        for j, x in enumerate([20, 200]):
            alone = run(cat, None, [x], 100_000, warmup=100, seed=9)
            np.testing.assert_array_equal(alone.misses[0], joint.misses[j])

    def test_infinite_cache_limit(self):
        cat = Catalog.from_arrays([1, 2, 3], [1.0], [np.arange(3)], [[0.5, 0.3, 0.2]])
        stats = run(cat, None, [6], 10_000, warmup=0, seed=0)
        assert stats.misses[0, 0] == 0
        cold = run(cat, None, [6], 10_000, warmup=0, seed=0, start="cold")
        assert cold.misses[0, 0] == 3

    def test_warmup_bounds(self):
        cat = two_flow_catalog()
        with pytest.raises(ConfigError):
            run(cat, None, [10], 1000, warmup=1000)
        with pytest.raises(ConfigError):
            run(cat, None, [], 1000, warmup=0)

    def test_low_confidence_warning(self):
        cat = two_flow_catalog(nu=(0.9999, 0.0001))
        stats = run(cat, None, [10], 20_000, warmup=0)
        assert any("low confidence" in w for w in stats.warnings)

    def test_budget_returns_partial(self):
        cat = two_flow_catalog()
        with pytest.raises(BudgetExceeded) as err:
            run(cat, None, [10], 2_000_000, warmup=0, chunk=100_000, deadline=0.0)
        assert err.value.partial.requests.sum() == 100_000

    def test_rows_and_merge(self):
        cat = two_flow_catalog()
        a = run(cat, None, [10, 100], 50_000, warmup=0, seed=1)
        b = run(cat, None, [10, 100], 50_000, warmup=0, seed=2)
        m = a.merge(b)
        assert m.overall_requests == 100_000
        rows = list(m.rows())
        assert len(rows) == 2 * 3 and rows[2][1] == "*"
        assert rows[2][3] == m.misses[0].sum()

    def test_stderr_is_binomial(self):
        s = MissStats(np.array([1.0]), np.array([100]), np.array([[25]]))
        assert s.stderr()[0, 0] == pytest.approx(math.sqrt(0.25 * 0.75 / 100))

    def test_che_agreement_at_experiment2_scale(self, experiment2_catalog):
        cat = experiment2_catalog
        pred = predict_che(AnalyticModel(cat), 2000).per_flow[0]
        stats = run(cat, None, [2000], 10_000_000, warmup=1_000_000, seed=0)
        assert abs(stats.miss_ratio()[0, 0] / pred - 1) < 0.10


class TestSeparated:
    def test_full_share_equals_dedicated(self):
        cat = two_flow_catalog()
        sep = run_separated(cat, None, [1.0, 0.0], [100], 100_000, warmup=0, seed=3)
        ded = run_dedicated(cat, None, [100], 100_000, warmup=0, seed=3)
        assert sep.misses[0, 0] == ded.misses[0, 0]
        # a zero partition misses every request
        assert sep.misses[0, 1] == sep.requests[1]

    def test_flow_served_alone_matches_private_cache(self):
        cat = two_flow_catalog()
        ded = run_dedicated(cat, None, [50], 400_000, warmup=0, seed=1)
        alone = run(cat.flow_only(0), None, [50], 400_000, warmup=0, seed=1)
        r1, r2 = ded.miss_ratio()[0, 0], alone.miss_ratio()[0, 0]
        se = math.hypot(ded.stderr()[0, 0], alone.stderr()[0, 0])
        assert abs(r1 - r2) < 4 * se

    def test_per_capacity_fractions(self):
        cat = two_flow_catalog()
        u = np.array([[0.5, 0.5], [0.25, 0.75]])
        stats = run_separated(cat, None, u, [40, 400], 100_000, warmup=0, seed=0)
        one = run_separated(cat, None, [0.25, 0.75], [400], 100_000, warmup=0, seed=0)
        np.testing.assert_array_equal(stats.misses[1], one.misses[0])

    def test_bad_fractions(self):
        cat = two_flow_catalog()
        with pytest.raises(ConfigError):
            run_separated(cat, None, [0.7, 0.7], [10], 1000, warmup=0)
