"""Acceptance criteria at their stated tolerances.

Every test records a one-line verdict that the terminal summary prints as
``criterion N: PASS|FAIL ...``.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from cachepool import (
    AnalyticModel,
    Constant,
    FlowSpec,
    MultiZipfModel,
    OverlapParams,
    PlanFlow,
    Weibull,
    Zipf,
    build_catalog,
    closed_multi_zipf,
    exact_miss,
    exact_sigma_distribution,
    good_region,
    load_scenario,
    m_eval,
    m_invert,
    optimal_split_zipf,
    optimize_split_numeric,
    run,
    run_separated,
    sigma_tail,
)
from cachepool.analytic import EULER_GAMMA, m_decomposed
from cachepool.planner import che_plan, overlap_optimal_split, pooling_ratio, zipf_separation_predictor
from cachepool.workload import tail_sum

from test_oracle import as_catalog, random_instance

pytestmark = pytest.mark.acceptance


def verdict(record_property, n, ok, detail, elapsed=None):
    if elapsed is not None:
        detail += f" [{elapsed:.0f}s]"
    record_property("criterion", n)
    record_property("detail", detail)
    assert ok, detail


def slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def test_1_zipf_ratio_constant(record_property):
    t0 = time.monotonic()
    cat = build_catalog([FlowSpec(1.0, Zipf(2.0), 100_000)])
    xs = [2000, 4000, 8000]
    stats = run(cat, None, xs, 50_000_000, seed=1)
    ratios = [stats.miss_ratio()[i, 0] / tail_sum(cat, 0, x + 1) for i, x in enumerate(xs)]
    elapsed = time.monotonic() - t0
    ok = all(abs(r / (math.pi / 2) - 1) <= 0.10 for r in ratios) and elapsed <= 300
    verdict(record_property, 1, ok, "ratios " + ", ".join(f"{r:.4f}" for r in ratios) + " vs pi/2=1.5708 (10%)", elapsed)


def test_2_weibull_ratio_constant(record_property):
    t0 = time.monotonic()
    cat = build_catalog([FlowSpec(1.0, Weibull(0.3), 100_000)])
    stats = run(cat, None, [3000], 50_000_000, seed=2)
    ratio = stats.miss_ratio()[0, 0] / tail_sum(cat, 0, 3001)
    target = math.exp(EULER_GAMMA)
    elapsed = time.monotonic() - t0
    ok = abs(ratio / target - 1) <= 0.15 and elapsed <= 300
    verdict(record_property, 2, ok, f"ratio {ratio:.4f} vs e^gamma={target:.4f} (15%)", elapsed)


def test_3_experiment2(record_property):
    t0 = time.monotonic()
    sc = load_scenario("experiment2")
    cat = sc.catalog()
    caps = [float(x) for x in sc.capacities]
    pooled = run(cat, None, caps, 50_000_000, seed=3)
    alone = run(cat.flow_only(0), None, caps, 50_000_000, seed=3)
    band = [i for i, x in enumerate(caps) if 500 <= x <= 2000]
    xs = [caps[i] for i in band]
    s_pooled = slope(xs, pooled.miss_ratio()[band, 0])
    s_alone = slope(xs, alone.miss_ratio()[band, 0])
    mz = MultiZipfModel.from_catalog(cat)
    worst = 0.0
    for i, x in enumerate(caps):
        if x >= 1000:
            emp = pooled.miss_ratio()[i]
            worst = max(worst, float(np.max(np.abs(closed_multi_zipf(mz, x, refined=True) / emp - 1))))
    elapsed = time.monotonic() - t0
    ok = abs(s_pooled + 0.9) <= 0.1 and abs(s_alone + 1.5) <= 0.15 and worst <= 0.15 and elapsed <= 900
    detail = f"pooled slope {s_pooled:.3f} (-0.9+-0.1), separated slope {s_alone:.3f} (-1.5+-0.15), closed max rel err {worst:.3f} (0.15)"
    verdict(record_property, 3, ok, detail, elapsed)


def test_4_experiment3_good_region(record_property):
    t0 = time.monotonic()
    sc = load_scenario("experiment3")
    base = sc.catalog()
    u = (0.55, 0.45)
    z = {}
    for nu1 in (0.5, 0.2):
        cat = base.with_nu([nu1, 1 - nu1])
        p = run(cat, None, [1000], 10_000_000, seed=4)
        s = run_separated(cat, None, u, [1000], 10_000_000, seed=4)
        sigma = np.hypot(p.stderr()[0], s.stderr()[0])
        z[nu1] = (s.miss_ratio()[0] - p.miss_ratio()[0]) / sigma  # > 0: pooling wins
    elapsed = time.monotonic() - t0
    ok = bool(np.all(z[0.5] > 3) and np.any(z[0.2] < -3)) and elapsed <= 600
    detail = "pooling advantage in sigmas: nu1=0.5 " + ", ".join(f"{v:.1f}" for v in z[0.5])
    detail += "; nu1=0.2 " + ", ".join(f"{v:.1f}" for v in z[0.2])
    verdict(record_property, 4, ok, detail, elapsed)


def test_5_case3_pooling_penalty(record_property):
    t0 = time.monotonic()
    ratio = pooling_ratio([PlanFlow(2.0, 0.6, 0.5, 1), PlanFlow(2.0, 0.6, 0.5, 4)])
    cat = build_catalog([FlowSpec(0.5, Zipf(2.0), 1_000_000, Constant(1)), FlowSpec(0.5, Zipf(2.0), 1_000_000, Constant(4))])
    u = che_plan(cat, 4000).u
    p = run(cat, None, [4000], 50_000_000, seed=5)
    s = run_separated(cat, None, u, [4000], 50_000_000, seed=5)
    gap = p.overall_ratio()[0] - s.overall_ratio()[0]
    zscore = gap / math.hypot(p.overall_stderr()[0], s.overall_stderr()[0])
    elapsed = time.monotonic() - t0
    ok = abs(ratio - 10 / 9) <= 1e-12 and zscore > 3
    detail = f"ratio {ratio:.12f} (10/9); pooled {p.overall_ratio()[0]:.6f} vs separated {s.overall_ratio()[0]:.6f} at u1={u[0]:.4f}, {zscore:.1f} sigma"
    verdict(record_property, 5, ok, detail, elapsed)


def _replicated(cat, x, n, reps, seed):
    """Pooled estimate over independent stationary-start replications."""
    per = n // reps
    results = [run(cat, None, [x], per, warmup=0, seed=seed * 1000 + r) for r in range(reps)]
    merged = results[0]
    for r in results[1:]:
        merged = merged.merge(r)
    spread = np.std([r.overall_ratio()[0] for r in results], ddof=1) / math.sqrt(reps)
    return merged.overall_ratio()[0], merged.overall_stderr()[0], spread


def test_6_oracle_equivalence(record_property):
    t0 = time.monotonic()
    rng = np.random.default_rng(606)
    instances = [random_instance(rng, int(rng.integers(2, 7))) for _ in range(50)]
    sigma_err = 0.0
    for inst in instances:
        table = exact_sigma_distribution(inst, 60)
        cat = as_catalog(inst)
        for k in range(len(inst.nu)):
            sigma_err = max(sigma_err, max(abs(sigma_tail(cat, k, n) - table[k, n]) for n in range(61)))

    def check(j):
        inst = instances[j]
        exact = exact_miss(inst).overall
        emp, binom, spread = _replicated(as_catalog(inst), inst.x, 10_000_000, 20, j)
        return exact, emp, binom, max(binom, spread)

    with ThreadPoolExecutor() as pool:
        res = list(pool.map(check, range(len(instances))))
    z_eff = [abs(e - x) / s if s > 0 else (0.0 if e == x else math.inf) for x, e, _, s in res]
    z_bin = [abs(e - x) / b if b > 0 else (0.0 if e == x else math.inf) for x, e, b, _ in res]
    elapsed = time.monotonic() - t0
    n_ok = sum(z <= 3 for z in z_eff)
    ok = n_ok == len(instances) and sigma_err <= 1e-15
    detail = (
        f"{n_ok}/50 within 3 sigma (max |z| {max(z_eff):.2f}); "
        f"{sum(z <= 3 for z in z_bin)}/50 within 3 binomial-only sigma; sigma_tail max diff {sigma_err:.1e}"
    )
    verdict(record_property, 6, ok, detail, elapsed)


def test_7_property_suites(record_property, experiment2_catalog):
    t0 = time.monotonic()
    rng = np.random.default_rng(707)
    failures = []
    model = AnalyticModel(experiment2_catalog)
    for x in np.geomspace(1, 0.99 * model.total_size, 100):
        if abs(m_eval(model, m_invert(model, x)) / x - 1) > 1e-8:
            failures.append(f"round trip at x={x:.4g}")
    for z in np.geomspace(1e4, 1e9, 30):
        m = model.m(z)
        if abs(m - m_decomposed(model, z)) / m >= 0.01:
            failures.append(f"decomposition at z={z:.3g}")
    for j in range(1000):
        M = int(rng.integers(2, 6))
        alpha = rng.uniform(1.1, 4.0)
        sizes = np.full(M, rng.uniform(1, 16)) if j % 2 else rng.uniform(1, 16, M)
        flows = [PlanFlow(alpha, rng.uniform(0.05, 20), rng.uniform(0.05, 1), s) for s in sizes]
        r = pooling_ratio(flows)
        equal = np.ptp(sizes) == 0
        if r < 1 - 1e-12 or (abs(r - 1) <= 1e-9) != equal:
            failures.append(f"holder draw {j}: ratio {r}")
    for j in range(1000):
        nu1, pD1, pD2 = rng.uniform(0.02, 0.98), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)
        cA, cB, cD = rng.uniform(0.05, 20, 3)
        params = OverlapParams(nu1, 1 - nu1, cA, cB, cD, rng.uniform(1.1, 4), 1 - pD1, pD1, 1 - pD2, pD2)
        if not good_region(params, overlap_optimal_split(params)).member:
            failures.append(f"good region draw {j}")
    for j in range(200):
        M = int(rng.integers(2, 5))
        alpha = rng.uniform(1.1, 4.0)
        flows = [PlanFlow(alpha, rng.uniform(0.05, 20), rng.uniform(0.05, 1), rng.uniform(1, 16)) for _ in range(M)]
        res = optimize_split_numeric(zipf_separation_predictor(flows), [f.nu for f in flows], 1e30)
        if np.max(np.abs(res.u - optimal_split_zipf(flows))) > 1e-3:
            failures.append(f"split draw {j}")
    elapsed = time.monotonic() - t0
    detail = "all suites hold" if not failures else f"{len(failures)} failures, first: {failures[0]}"
    verdict(record_property, 7, not failures, detail, elapsed)


def test_8_per_flow_impact(record_property):
    t0 = time.monotonic()
    cat = build_catalog([FlowSpec(0.9, Zipf(2.0), 1_000_000), FlowSpec(0.1, Zipf(2.0), 1_000_000)])
    stats = run(cat, None, [2000], 50_000_000, seed=8)
    r = stats.miss_ratio()[0]
    ratio = r[0] / r[1]
    target = (0.9 / 0.1) ** -0.5
    elapsed = time.monotonic() - t0
    verdict(record_property, 8, abs(ratio / target - 1) <= 0.15, f"ratio {ratio:.4f} vs {target:.4f} (15%)", elapsed)
