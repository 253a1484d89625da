import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachepool import (
    DomainError,
    FlowSpec,
    OverlapParams,
    PartitionPlan,
    PlanFlow,
    UnsupportedConfigurationError,
    Zipf,
    build_catalog,
    good_region,
    optimal_split_zipf,
    optimize_split_numeric,
    per_flow_impact,
    pooling_vs_separation,
)
from cachepool.planner import (
    che_plan,
    overlap_optimal_split,
    overlap_pooled_miss,
    overlap_separated_miss,
    pooling_ratio,
    zipf_separation_predictor,
)

pos = st.floats(0.05, 20.0)
# the power laws are scale free; a huge capacity keeps every prediction below 1
BIG = 1e30
alphas = st.floats(1.1, 4.0)


def experiment3(nu1):
    c = 0.4868
    return OverlapParams(nu1, 1 - nu1, c, c, c, 1.7, 0.8, 0.2, 0.8, 0.2)


@st.composite
def overlap_params(draw):
    nu1 = draw(st.floats(0.02, 0.98))
    pD1, pD2 = draw(st.floats(0.01, 0.99)), draw(st.floats(0.01, 0.99))
    return OverlapParams(nu1, 1 - nu1, draw(pos), draw(pos), draw(pos), draw(alphas), 1 - pD1, pD1, 1 - pD2, pD2)


@st.composite
def zipf_flows(draw, m=None, equal_sizes=False):
    alpha = draw(alphas)
    m = m or draw(st.integers(2, 5))
    size = draw(st.floats(1, 16))
    return [PlanFlow(alpha, draw(pos), draw(st.floats(0.05, 1.0)), size if equal_sizes else draw(st.floats(1, 16))) for _ in range(m)]


class TestOptimalSplit:
    def test_identical_flows(self):
        f = PlanFlow(2.0, 0.6, 0.5)
        np.testing.assert_allclose(optimal_split_zipf([f, f]), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_four_to_one(self):
        u = optimal_split_zipf([PlanFlow(2.0, 0.8, 0.5), PlanFlow(2.0, 0.2, 0.5)])
        assert u[0] == pytest.approx(2 / 3, rel=1e-14)
        grid = np.linspace(0.001, 0.999, 9981)
        pred = zipf_separation_predictor([PlanFlow(2.0, 0.8, 0.5), PlanFlow(2.0, 0.2, 0.5)])
        obj = [0.5 * pred(0, g * 1e6) + 0.5 * pred(1, (1 - g) * 1e6) for g in grid]
        assert grid[int(np.argmin(obj))] == pytest.approx(2 / 3, abs=2e-4)

    def test_size_shape(self):
        sizes = [1.0, 2.0, 5.0]
        u = optimal_split_zipf([PlanFlow(1.5, 0.4, 1 / 3, s) for s in sizes])
        w = np.array(sizes) ** (1 - 1 / 1.5)
        np.testing.assert_allclose(u, w / w.sum(), rtol=1e-14)

    @given(zipf_flows(), st.floats(0.01, 100))
    def test_normalized_and_scale_invariant(self, flows, lam):
        u = optimal_split_zipf(flows)
        assert math.fsum(u) == pytest.approx(1.0, abs=1e-15)
        scaled = [PlanFlow(f.alpha, f.c * lam, f.nu, f.size) for f in flows]
        np.testing.assert_allclose(optimal_split_zipf(scaled), u, rtol=1e-10)

    def test_mixed_exponents_favour_smallest(self):
        flows = [PlanFlow(1.5, 0.38, 0.1), PlanFlow(4.0, 0.92, 0.9)]
        assert optimal_split_zipf(flows).tolist() == [1.0, 0.0]
        u = optimal_split_zipf(flows, x=8000)
        assert 0 < u[1] < 0.5 and u.sum() == pytest.approx(1.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            PlanFlow(1.0, 1.0, 1.0)


class TestPoolingRatio:
    def test_equal_sizes_give_one(self):
        plan = pooling_vs_separation([PlanFlow(2.0, 0.6, 0.3), PlanFlow(2.0, 0.2, 0.7)])
        assert plan.ratio == pytest.approx(1.0, abs=1e-12) and plan.verdict == "equivalent"

    def test_case3_ratio(self):
        plan = pooling_vs_separation([PlanFlow(2.0, 0.6, 0.5, 1), PlanFlow(2.0, 0.6, 0.5, 4)], x=4000)
        assert plan.ratio == pytest.approx(10 / 9, rel=1e-14)
        assert plan.verdict == "separate"
        assert plan.overall_pooled > plan.overall_separated
        assert plan.overall_pooled / plan.overall_separated == pytest.approx(10 / 9, rel=1e-12)

    @settings(max_examples=1000)
    @given(zipf_flows())
    def test_holder(self, flows):
        r = pooling_ratio(flows)
        assert r >= 1 - 1e-12
        sizes = [f.size for f in flows]
        if max(sizes) / min(sizes) > 1 + 1e-3:
            assert r > 1 + 1e-12

    @settings(max_examples=200)
    @given(zipf_flows(equal_sizes=True))
    def test_holder_equality(self, flows):
        assert pooling_ratio(flows) == pytest.approx(1.0, abs=1e-9)

    def test_plan_rejects_off_simplex(self):
        with pytest.raises(DomainError):
            PartitionPlan(np.array([0.6, 0.6]), np.zeros(2), np.zeros(2), np.ones(2) / 2, 1.0, "pool")


class TestImpact:
    def test_identical(self):
        f = PlanFlow(2.0, 0.6, 0.5)
        rep = per_flow_impact([f, f])
        np.testing.assert_allclose(rep.matrix, np.ones((2, 2)))

    def test_rates_nine_to_one(self):
        rep = per_flow_impact([PlanFlow(2.0, 0.6, 0.9), PlanFlow(2.0, 0.6, 0.1)])
        assert rep.matrix[0, 1] == pytest.approx(1 / 3, rel=1e-14)
        np.testing.assert_allclose(rep.pooled_over_separated, 1.0, rtol=1e-12)

    @given(zipf_flows(equal_sizes=True), st.floats(0.01, 100))
    def test_homogeneous_in_c(self, flows, lam):
        scaled = [PlanFlow(f.alpha, f.c * lam, f.nu, f.size) for f in flows]
        np.testing.assert_allclose(per_flow_impact(scaled).matrix, per_flow_impact(flows).matrix, rtol=1e-10)

    def test_unequal_sizes(self):
        with pytest.raises(UnsupportedConfigurationError):
            per_flow_impact([PlanFlow(2.0, 0.6, 0.5, 1), PlanFlow(2.0, 0.6, 0.5, 2)])


class TestGoodRegion:
    @settings(max_examples=1000)
    @given(overlap_params())
    def test_optimal_split_is_always_good(self, params):
        assert good_region(params, overlap_optimal_split(params)).member

    @settings(max_examples=100)
    @given(overlap_params())
    def test_optimal_split_matches_numeric(self, params):
        nus = [params.nu1, params.nu2]

        def pred(k, cap):
            return overlap_separated_miss(params, cap, (1.0, 1.0))[k]

        res = optimize_split_numeric(pred, nus, BIG)
        np.testing.assert_allclose(res.u, overlap_optimal_split(params), atol=1e-3)

    def test_experiment3_band(self):
        u = (0.55, 0.45)
        for nu1 in np.arange(0.40, 0.751, 0.05):
            assert good_region(experiment3(round(nu1, 2)), u).member, nu1
        assert not good_region(experiment3(0.2), u).member

    def test_symmetric_margins(self):
        gr = good_region(experiment3(0.5), (0.5, 0.5))
        assert gr.margins[0] == pytest.approx(gr.margins[1], rel=1e-14)

    def test_member_means_pooling_wins(self):
        params = experiment3(0.5)
        u = (0.55, 0.45)
        assert good_region(params, u).member
        assert np.all(overlap_pooled_miss(params, 1000) < overlap_separated_miss(params, 1000, u))

    def test_needs_shared_items(self):
        params = OverlapParams(0.5, 0.5, 1, 1, 1, 2.0, 1.0, 0.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            good_region(params, (0.5, 0.5))

    def test_bad_split(self):
        with pytest.raises(DomainError):
            good_region(experiment3(0.5), (0.7, 0.7))


class TestNumericSplit:
    @settings(max_examples=150)
    @given(zipf_flows(m=2))
    def test_two_flows_match_closed_form(self, flows):
        res = optimize_split_numeric(zipf_separation_predictor(flows), [f.nu for f in flows], BIG)
        assert not res.grid_fallback
        np.testing.assert_allclose(res.u, optimal_split_zipf(flows), atol=1e-3)

    @settings(max_examples=40)
    @given(zipf_flows())
    def test_many_flows_match_closed_form(self, flows):
        u_star = optimal_split_zipf(flows)
        pred = zipf_separation_predictor(flows)
        res = optimize_split_numeric(pred, [f.nu for f in flows], BIG)
        np.testing.assert_allclose(res.u, u_star, atol=1e-3)

    @settings(max_examples=40)
    @given(zipf_flows(m=3))
    def test_never_worse_than_warm_start(self, flows):
        pred = zipf_separation_predictor(flows)
        nus = [f.nu for f in flows]
        warm = optimal_split_zipf(flows)
        res = optimize_split_numeric(pred, nus, BIG, warm_start=warm)
        start = math.fsum(nu * pred(k, warm[k] * BIG) for k, nu in enumerate(nus))
        assert res.objective <= start + 1e-12

    def test_single_flow(self):
        res = optimize_split_numeric(lambda k, cap: 1 / cap, [1.0], 100)
        assert res.u.tolist() == [1.0] and res.objective == pytest.approx(0.01)

    def test_non_monotone_falls_back_to_grid(self):
        res = optimize_split_numeric(lambda k, cap: abs(math.sin(cap)), [0.5, 0.5], 10)
        assert res.grid_fallback

    def test_case1_pooling_indistinguishable(self):
        cat = build_catalog([FlowSpec(0.1, Zipf(1.5), 1_000_000), FlowSpec(0.9, Zipf(4.0), 1_000_000)])
        plan = che_plan(cat, 8000)
        assert abs(plan.overall_separated / plan.overall_pooled - 1) < 0.05
        assert not plan.asymptotic and plan.x == 8000
