"""Command line runner: ``cachepool simulate|predict|plan|compare``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure or partial
output (for example an exhausted time budget).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cache_sim
from .analytic import (
    AnalyticModel,
    MultiZipfModel,
    closed_multi_zipf,
    closed_weibull,
    closed_zipf,
    predict_asymptotic,
    predict_che,
)
from .errors import (
    BudgetExceeded,
    CachePoolError,
    ConfigError,
    DomainError,
    ExtrapolationError,
    SaturationError,
    UnsupportedConfigurationError,
)
from .planner import (
    OverlapParams,
    PlanFlow,
    che_plan,
    che_separation_predictor,
    good_region,
    optimal_split_zipf,
    optimize_split_numeric,
    overlap_optimal_split,
    overlap_pooled_miss,
    overlap_separated_miss,
    per_flow_impact,
    pooling_vs_separation,
)
from .scenario import METHODS, Scenario, bundled_scenarios, load_scenario
from .workload import Constant, LogZipf, Weibull, Zipf, tail_beyond

log = logging.getLogger("cachepool")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CONFIG_ERRORS = (ConfigError, DomainError, UnsupportedConfigurationError, SaturationError)
SKIP = "skip"

SCHEMAS = {
    "simulate": ("x", "flow", "requests", "misses", "miss_ratio", "stderr"),
    "predict": ("x", "flow", "method", "miss_pred"),
    "compare": ("x", "flow", "method", "empirical", "stderr", "predicted", "rel_error"),
    "compare_summary": ("method", "flow", "x_min", "points", "max_rel_error"),
    "plan": ("x", "basis", "flow", "u", "miss_pooled", "miss_separated"),
    "good_region": ("nu1", "u1", "u2", "member", "margin", "margin1", "margin2"),
}


class PartialResult(CachePoolError):
    """Some output was written but the command could not finish."""


# --------------------------------------------------------------------------
# CSV helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def write_csv(path: Path, kind: str, rows) -> Path:
    """Write rows under a ``# schema`` comment line and a header row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: cachepool/{kind}/v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEMAS[kind])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------------------
# simulate


def _threads(n_tasks: int) -> int:
    env = os.environ.get("CACHEPOOL_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"CACHEPOOL_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_tasks))


def _run_seeds(fn, seeds):
    """Run ``fn(seed)`` for each seed in parallel; merge in seed order."""
    results, partial = [], False
    with ThreadPoolExecutor(max_workers=_threads(len(seeds))) as pool:
        futures = [pool.submit(fn, s) for s in seeds]
        for fut in futures:
            try:
                results.append(fut.result())
            except BudgetExceeded as e:
                partial = True
                if e.partial is not None:
                    results.append(e.partial)
    if not results:
        return None, True
    merged = results[0]
    for r in results[1:]:
        merged = merged.merge(r)
    return merged, partial


def separation_fractions(sc: Scenario, catalog) -> np.ndarray | None:
    """One split per capacity, or ``None`` for dedicated or absent separation."""
    if sc.separation is None or sc.separation == "dedicated":
        return None
    caps = sc.capacities
    if sc.separation != "optimal":
        return np.tile(np.asarray(sc.separation, dtype=float), (len(caps), 1))
    warm = None
    try:
        warm = optimal_split_zipf(plan_flows(sc, catalog))
    except CachePoolError:
        pass
    pred = che_separation_predictor(catalog)
    rows = [optimize_split_numeric(pred, catalog.nu, x, warm_start=warm).u for x in caps]
    return np.array(rows)


def simulate(sc: Scenario, deadline=None):
    """Pooled statistics, separated statistics (or ``None``) and a partial flag."""
    catalog = sc.catalog()
    kw = dict(start=sc.start, scenario=sc.name, deadline=deadline)

    def pooled(seed):
        return cache_sim.run(catalog, sc.schedule, sc.capacities, sc.requests, sc.warmup, seed, **kw)

    stats, partial = _run_seeds(pooled, sc.seeds)
    sep = None
    if sc.separation is not None and not partial:
        u = separation_fractions(sc, catalog)

        def separated(seed):
            if u is None:
                return cache_sim.run_dedicated(catalog, sc.schedule, sc.capacities, sc.requests, sc.warmup, seed, **kw)
            return cache_sim.run_separated(catalog, sc.schedule, u, sc.capacities, sc.requests, sc.warmup, seed, **kw)

        sep, partial = _run_seeds(separated, sc.seeds)
    for w in (stats.warnings if stats else []):
        log.warning(w)
    return stats, sep, partial


def cmd_simulate(sc: Scenario, out: Path, deadline=None) -> int:
    stats, sep, partial = simulate(sc, deadline)
    if stats is not None:
        write_csv(out / "simulate.csv", "simulate", stats.rows())
    if sep is not None:
        write_csv(out / "simulate_separated.csv", "simulate", sep.rows())
    if partial:
        raise PartialResult("time budget exhausted; wrote partial results")
    return EXIT_OK


# --------------------------------------------------------------------------
# predict


def _closed_rows(sc: Scenario, catalog, x):
    """Per-flow closed-form predictions, ``None`` entries where unsupported."""
    M = catalog.n_flows
    if catalog.overlap is not None:
        return [None] * M
    if M == 1:
        spec = sc.flows[0]
        fam = spec.popularity
        if not isinstance(spec.size_rule, Constant):
            return [None]
        cap = x / spec.size_rule.s
        c = fam.c if fam.c is not None else catalog.constants["1"]
        try:
            if isinstance(fam, Weibull):
                return [closed_weibull(fam.xi, c, cap).miss]
            kind = "log" if isinstance(fam, LogZipf) else "constant"
            return [closed_zipf(fam.alpha, c, kind, cap).miss]
        except DomainError:
            return [None]
    try:
        mz = MultiZipfModel.from_catalog(catalog)
    except (UnsupportedConfigurationError, DomainError):
        return [None] * M
    return list(np.minimum(closed_multi_zipf(mz, x, refined=True), 1.0))


TRUNCATION_TOL = 1e-6


def _warn_truncation(sc: Scenario, catalog, per_flow, warned: set):
    """Warn once per flow when the mass past the catalog end is not negligible."""
    if catalog.overlap is not None:
        return
    for k, (spec, v) in enumerate(zip(sc.flows, per_flow)):
        if v is None or k in warned:
            continue
        fam = spec.popularity
        c = fam.c if fam.c is not None else catalog.constants[str(k + 1)]
        tail = tail_beyond(fam, spec.catalog_size, c)
        if tail > TRUNCATION_TOL * v:
            warned.add(k)
            log.warning(
                "flow %d: mass %.3g past the catalog end is not negligible against the closed-form miss %.3g",
                k + 1, tail, v,
            )


def predict(sc: Scenario, methods=None) -> list:
    """Rows ``(x, flow, method, miss_pred)``; unsupported entries hold ``"skip"``."""
    methods = tuple(methods or sc.methods)
    catalog = sc.catalog()
    model = AnalyticModel(catalog)
    nu = np.asarray(catalog.nu)
    rows, warned = [], set()
    for x in sc.capacities:
        for method in methods:
            if method == "che":
                pc = predict_che(model, x)
                per_flow, overall = list(pc.per_flow), pc.overall
            elif method == "asymptotic":
                per_flow = []
                for k in range(catalog.n_flows):
                    try:
                        per_flow.append(predict_asymptotic(model, k, x).miss)
                    except ExtrapolationError as e:
                        log.info("asymptotic skipped: %s", e)
                        per_flow.append(None)
                overall = None if None in per_flow else float(np.dot(nu, per_flow))
            elif method == "closed":
                per_flow = _closed_rows(sc, catalog, x)
                _warn_truncation(sc, catalog, per_flow, warned)
                overall = None if None in per_flow else float(np.dot(nu, per_flow))
            else:
                raise ConfigError(f"unknown method {method!r}")
            for k, v in enumerate(per_flow):
                rows.append((x, str(k + 1), method, SKIP if v is None else v))
            rows.append((x, "*", method, SKIP if overall is None else overall))
    return rows


def cmd_predict(sc: Scenario, out: Path, methods=None) -> int:
    write_csv(out / "predict.csv", "predict", predict(sc, methods))
    return EXIT_OK


# --------------------------------------------------------------------------
# compare


def compare_rows(sim_rows, pred_rows, x_min: float):
    """Join empirical and predicted rows; returns ``(rows, summary)``.

    The reference rows are normally simulation output.  A prediction CSV is
    accepted too; it is then joined per method with zero standard error.
    Raises :class:`PartialResult` when a prediction has no reference row.
    """
    by_method = bool(sim_rows) and "miss_pred" in sim_rows[0]
    sim = {}
    for r in sim_rows:
        if by_method:
            if r["miss_pred"] != SKIP:
                sim[(float(r["x"]), r["flow"], r["method"])] = (float(r["miss_pred"]), 0.0)
        else:
            sim[(float(r["x"]), r["flow"])] = (float(r["miss_ratio"]), float(r["stderr"]))
    rows, worst = [], {}
    for r in pred_rows:
        key = (float(r["x"]), r["flow"])
        ref = sim.get(key + (r["method"],) if by_method else key)
        if ref is None:
            if by_method and r["miss_pred"] == SKIP:
                continue
            raise PartialResult(f"no reference row for x={r['x']} flow={r['flow']} method={r['method']}")
        emp, se = ref
        if r["miss_pred"] == SKIP:
            rows.append((key[0], key[1], r["method"], emp, se, SKIP, SKIP))
            continue
        pred = float(r["miss_pred"])
        err = abs(pred - emp) / emp if emp > 0 else (0.0 if pred == 0 else math.inf)
        rows.append((key[0], key[1], r["method"], emp, se, pred, err))
        if key[0] >= x_min:
            w = worst.setdefault((r["method"], r["flow"]), [0, 0.0])
            w[0] += 1
            w[1] = max(w[1], err)
    summary = [(m, f, x_min, n, e) for (m, f), (n, e) in worst.items()]
    return rows, summary


def default_x_min(catalog) -> float:
    return 10 * catalog.mean_size * 20


def cmd_compare(sc: Scenario, out: Path, methods=None, deadline=None, simulation=None, predictions=None) -> int:
    if simulation is not None:
        sim_rows = read_csv(Path(simulation))
    else:
        cmd_simulate(sc, out, deadline)
        sim_rows = read_csv(out / "simulate.csv")
    if predictions is not None:
        pred_rows = read_csv(Path(predictions))
    else:
        cmd_predict(sc, out, methods)
        pred_rows = read_csv(out / "predict.csv")
    x_min = sc.x_min if sc.x_min is not None else default_x_min(sc.catalog())
    rows, summary = compare_rows(sim_rows, pred_rows, x_min)
    write_csv(out / "compare.csv", "compare", rows)
    write_csv(out / "compare_summary.csv", "compare_summary", summary)
    return EXIT_OK


# --------------------------------------------------------------------------
# plan


def plan_flows(sc: Scenario, catalog) -> list:
    """Planner view of disjoint Zipf flows with constant item sizes."""
    if sc.overlap is not None:
        raise UnsupportedConfigurationError("overlapped flows use the overlap planner")
    out = []
    for k, spec in enumerate(sc.flows):
        fam = spec.popularity
        if type(fam) is not Zipf or not isinstance(spec.size_rule, Constant):
            raise UnsupportedConfigurationError(f"flow {k + 1} is not a Zipf flow with constant item size")
        c = fam.c if fam.c is not None else catalog.constants[str(k + 1)]
        out.append(PlanFlow(fam.alpha, c, catalog.nu[k], spec.size_rule.s))
    return out


def overlap_params(sc: Scenario, catalog, nu1=None) -> OverlapParams:
    ov = sc.overlap
    fams = ov.classes
    alphas = {getattr(fams[c], "alpha", None) for c in "ABD"}
    if len(alphas) != 1 or not all(type(fams[c]) is Zipf for c in "ABD"):
        raise UnsupportedConfigurationError("overlap planning needs Zipf classes with a common exponent")
    cs = {c: fams[c].c if fams[c].c is not None else catalog.constants[c] for c in "ABD"}
    nu1 = catalog.nu[0] if nu1 is None else nu1
    return OverlapParams(nu1, 1 - nu1, cs["A"], cs["B"], cs["D"], alphas.pop(), ov.pA1, ov.pD1, ov.pB2, ov.pD2)


def plan(sc: Scenario):
    """Report lines, plan CSV rows and good-region CSV rows."""
    catalog = sc.catalog()
    lines = [f"scenario: {sc.name}"]
    rows, region = [], []
    u_fixed = sc.plan.get("u")
    if sc.overlap is not None:
        params = overlap_params(sc, catalog)
        u = np.asarray(u_fixed) if u_fixed is not None else overlap_optimal_split(params)
        lines.append("basis: asymptotic, two flows with shared items")
        lines.append("split u: " + ", ".join(_fmt(v) for v in u))
        if params.pD_star > 0:
            g = good_region(params, u)
            lines.append(f"good region: member={_fmt(g.member)} margin={_fmt(g.margin)}")
        for x in sc.capacities:
            pooled, sep = overlap_pooled_miss(params, x), overlap_separated_miss(params, x, u)
            rows += [(x, "asymptotic", str(k + 1), u[k], pooled[k], sep[k]) for k in range(2)]
        for nu1 in sc.plan.get("nu1", [catalog.nu[0]]):
            p = overlap_params(sc, catalog, nu1)
            if p.pD_star <= 0:
                continue
            g = good_region(p, u)
            region.append((nu1, u[0], u[1], g.member, g.margin, *g.margins))
    else:
        try:
            flows = plan_flows(sc, catalog)
        except UnsupportedConfigurationError as e:
            flows = None
            lines.append(f"asymptotic planner unavailable: {e}")
        if flows is not None and len(flows) > 1:
            head = pooling_vs_separation(flows)
            lines.append("basis: asymptotic (large cache)")
            lines.append(f"ratio pooled/separated: {_fmt(head.ratio)}")
            lines.append(f"verdict: {head.verdict}")
            lines.append("optimal split u*: " + ", ".join(_fmt(v) for v in head.u))
            lines += [f"note: {n}" for n in head.notes]
            try:
                impact = per_flow_impact(flows)
                for i in range(len(flows)):
                    lines.append(
                        f"impact flow {i + 1}: " + ", ".join(_fmt(v) for v in impact.matrix[i])
                    )
            except (UnsupportedConfigurationError, DomainError) as e:
                lines.append(f"per-flow impact unavailable: {e}")
            for x in sc.capacities:
                pl = pooling_vs_separation(flows, x)
                u = np.asarray(u_fixed) if u_fixed is not None else pl.u
                rows += [(x, "asymptotic", str(k + 1), u[k], pl.pooled[k], pl.separated[k]) for k in range(len(flows))]
    for x in sc.capacities:
        try:
            cp = che_plan(catalog, x, u_fixed)
        except SaturationError as e:
            lines.append(f"x={_fmt(x)}: {e}")
            continue
        rows += [(x, "che", str(k + 1), cp.u[k], cp.pooled[k], cp.separated[k]) for k in range(catalog.n_flows)]
        lines.append(
            f"x={_fmt(x)} che: pooled={_fmt(cp.overall_pooled)} separated={_fmt(cp.overall_separated)} "
            f"ratio={_fmt(cp.ratio)} verdict={cp.verdict} u=" + ", ".join(_fmt(v) for v in cp.u)
        )
    return lines, rows, region


def cmd_plan(sc: Scenario, out: Path) -> int:
    lines, rows, region = plan(sc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.txt").write_text("\n".join(lines) + "\n")
    write_csv(out / "plan.csv", "plan", rows)
    if region:
        write_csv(out / "good_region.csv", "good_region", region)
    print("\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cachepool", description="LRU cache pooling versus separation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "empirical miss ratios from the LRU simulator"),
        ("predict", "analytic miss-ratio predictions"),
        ("plan", "pooling versus separation report"),
        ("compare", "simulation joined with predictions"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
        p.add_argument("--seeds", help="comma-separated seeds, overriding the scenario")
        p.add_argument("--requests", type=int, help="requests per seed, overriding the scenario")
        p.add_argument("--no-warmup", action="store_true", help="count every request")
        p.add_argument("--budget", type=float, help="wall-clock budget in seconds")
        if name == "compare":
            p.add_argument("--simulation", help="reuse an existing simulate.csv (or a predict.csv as reference)")
            p.add_argument("--predictions", help="reuse an existing predict.csv")
    sub.add_parser("scenarios", help="list bundled scenarios")
    return parser


def _apply_overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
        if not seeds or min(seeds) < 0:
            raise ConfigError("--seeds needs at least one non-negative seed")
        changes["seeds"] = seeds
    if args.requests is not None:
        if args.requests <= 0:
            raise ConfigError("--requests must be positive")
        changes["requests"] = args.requests
        if sc.warmup is not None and sc.warmup >= args.requests:
            changes["warmup"] = None
    if args.no_warmup:
        changes["warmup"] = 0
    if args.methods:
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        changes["methods"] = methods
    return dataclasses.replace(sc, **changes) if changes else sc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "scenarios":
        print("\n".join(bundled_scenarios()))
        return EXIT_OK
    try:
        sc = _apply_overrides(load_scenario(args.scenario), args)
        budget = args.budget if args.budget is not None else sc.time_budget
        deadline = time.monotonic() + budget if budget else None
        if args.command == "simulate":
            return cmd_simulate(sc, args.out, deadline)
        if args.command == "predict":
            return cmd_predict(sc, args.out)
        if args.command == "plan":
            return cmd_plan(sc, args.out)
        return cmd_compare(sc, args.out, None, deadline, args.simulation, args.predictions)
    except CONFIG_ERRORS as e:
        print(f"cachepool: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PartialResult, CachePoolError, ArithmeticError, OSError) as e:
        print(f"cachepool: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
