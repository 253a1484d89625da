"""Scenario files: JSON descriptions of a workload, capacities and run settings.

A minimal scenario::

    {
      "name": "zipf2",
      "flows": [{"nu": 1.0, "family": "zipf", "alpha": 2.0, "c": "auto",
                 "N": 100000}],
      "capacities": {"log_range": [500, 8000, 5]},
      "requests": 20000000
    }

Errors raise :class:`ScenarioError` naming the offending field and, where it
can be located, the line in the file.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .workload import (
    Catalog,
    Constant,
    FlowSpec,
    LogZipf,
    Multinomial,
    OverlapSpec,
    RateSchedule,
    Weibull,
    Zipf,
    build_catalog,
)

METHODS = ("che", "asymptotic", "closed")
FAMILIES = {"zipf": Zipf, "logzipf": LogZipf, "weibull": Weibull}
KNOWN_KEYS = {
    "name", "description", "seed", "seeds", "catalog_seed", "flows", "overlap", "schedule",
    "capacities", "requests", "warmup", "methods", "separation", "plan", "x_min",
    "time_budget", "start",
}


class ScenarioError(ConfigError):
    """Invalid scenario file; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None, source=None):
        self.field, self.line, self.source = field, line, source
        where = []
        if source:
            where.append(str(source))
        if line:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


@dataclass
class Scenario:
    name: str
    flows: list
    capacities: np.ndarray
    requests: int
    overlap: OverlapSpec | None = None
    schedule: RateSchedule | None = None
    warmup: int | None = None  # None: the simulator's default rule
    seeds: tuple = (0,)
    catalog_seed: int = 0
    methods: tuple = ("che",)
    separation: object = None  # None | "optimal" | "dedicated" | tuple of fractions
    plan: dict = field(default_factory=dict)
    x_min: float | None = None
    time_budget: float | None = None
    start: str = "stationary"
    description: str = ""

    def catalog(self) -> Catalog:
        return build_catalog(self.flows, self.overlap, seed=self.catalog_seed)


class _Reader:
    """Walks the parsed JSON while tracking the field path for diagnostics."""

    def __init__(self, text: str, source):
        self.text, self.source = text, source

    def line_of(self, path: str):
        key = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", path)
        if not key:
            return None
        m = re.search(r'"%s"\s*:' % re.escape(key[-1]), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def fail(self, path, message):
        raise ScenarioError(message, field=path, line=self.line_of(path), source=self.source)

    def number(self, obj, key, path, *, default=None, positive=False, integer=False, required=True):
        if key not in obj:
            if required and default is None:
                self.fail(f"{path}.{key}" if path else key, "is required")
            return default
        v = obj[key]
        name = f"{path}.{key}" if path else key
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(name, f"must be a number, got {v!r}")
        if not math.isfinite(v):
            self.fail(name, "must be finite")
        if integer:
            if float(v) != int(v):
                self.fail(name, f"must be an integer, got {v!r}")
            v = int(v)
        if positive and v <= 0:
            self.fail(name, f"must be positive, got {v!r}")
        return v

    def numbers(self, v, path, n=None):
        if not isinstance(v, list) or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v):
            self.fail(path, f"must be a list of numbers, got {v!r}")
        if n is not None and len(v) != n:
            self.fail(path, f"must have {n} entries, got {len(v)}")
        return [float(a) for a in v]


FAMILY_KEYS = {"family", "alpha", "xi", "c", "head", "truncated"}


def _family(r: _Reader, obj, path):
    """Popularity family from the flat keys ``family, alpha|xi, c, head, truncated``."""
    name = str(obj.get("family", "")).lower()
    if name not in FAMILIES:
        r.fail(f"{path}.family", f"unknown family {obj.get('family')!r}; choose from {sorted(FAMILIES)}")
    kw = {}
    if name == "weibull":
        kw["xi"] = r.number(obj, "xi", path)
    else:
        kw["alpha"] = r.number(obj, "alpha", path, positive=True)
        kw["truncated"] = bool(obj.get("truncated", False))
    if obj.get("c", "auto") != "auto":
        kw["c"] = r.number(obj, "c", path, positive=True)
    if "head" in obj:
        kw["head"] = tuple(r.numbers(obj["head"], f"{path}.head"))
    try:
        return FAMILIES[name](**kw)
    except (ConfigError, DomainError) as e:
        r.fail(path, str(e))


def _size_rule(r: _Reader, v, path):
    if v is None:
        return Constant()
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        if v != int(v) or v < 1:
            r.fail(path, f"constant size must be an integer >= 1, got {v!r}")
        return Constant(int(v))
    if isinstance(v, dict) and {"support", "probs"} <= set(v) <= {"support", "probs", "normalize"}:
        probs = r.numbers(v["probs"], f"{path}.probs")
        if v.get("normalize", False):
            total = math.fsum(probs)
            if total <= 0:
                r.fail(f"{path}.probs", "must have positive total mass")
            probs = [q / total for q in probs]
        try:
            return Multinomial(tuple(int(s) for s in r.numbers(v["support"], f"{path}.support")), tuple(probs))
        except ConfigError as e:
            r.fail(path, str(e))
    r.fail(path, "must be an integer or an object with 'support', 'probs' and optional 'normalize'")


def _flows(r: _Reader, data):
    raw = data.get("flows")
    if not isinstance(raw, list) or not raw:
        r.fail("flows", "must be a non-empty list")
    overlapped = data.get("overlap") is not None
    flows = []
    for j, obj in enumerate(raw):
        path = f"flows[{j}]"
        if not isinstance(obj, dict):
            r.fail(path, "must be an object")
        unknown = set(obj) - FAMILY_KEYS - {"nu", "N", "sizes", "repeat", "class_weights", "rate"}
        if unknown:
            r.fail(f"{path}.{sorted(unknown)[0]}", "unknown key")
        repeat = r.number(obj, "repeat", path, default=1, integer=True, positive=True, required=False)
        nu = r.number(obj, "nu", path)
        if nu < 0:
            r.fail(f"{path}.nu", "must be non-negative")
        if overlapped and "family" not in obj:
            pop, n = None, 0
        else:
            pop = _family(r, obj, path)
            n = r.number(obj, "N", path, integer=True, positive=True)
        rule = _size_rule(r, obj.get("sizes"), f"{path}.sizes")
        weights = obj.get("class_weights")
        rate = r.number(obj, "rate", path, positive=True, required=False)
        for _ in range(repeat):
            try:
                flows.append(FlowSpec(nu, pop, n, rule, class_weights=weights, rate=rate))
            except ConfigError as e:
                r.fail(path, str(e))
    total = math.fsum(f.nu for f in flows)
    if abs(total - 1) > 1e-12:
        r.fail("flows", f"flow rates nu sum to {total!r}, not 1")
    return flows


def _per_class(r: _Reader, obj, key, path, *, integer=False, positive=True):
    """A value for each of A, B, D given as one number or a list of three."""
    v = obj.get(key)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v] * 3
    vals = r.numbers(v, f"{path}.{key}", 3)
    if positive and min(vals) <= 0:
        r.fail(f"{path}.{key}", "entries must be positive")
    if integer:
        if any(x != int(x) for x in vals):
            r.fail(f"{path}.{key}", "entries must be integers")
        vals = [int(x) for x in vals]
    return dict(zip("ABD", vals))


def _overlap(r: _Reader, obj):
    """Two-flow shared-item model: ``pA1, pD1, pB2, pD2, alphas, cs, N`` (A, B, D order)."""
    path = "overlap"
    if not isinstance(obj, dict):
        r.fail(path, "must be an object")
    unknown = set(obj) - {"pA1", "pD1", "pB2", "pD2", "family", "alphas", "cs", "N"}
    if unknown:
        r.fail(f"{path}.{sorted(unknown)[0]}", "unknown key")
    kw = {k: r.number(obj, k, path) for k in ("pA1", "pD1", "pB2", "pD2")}
    family = str(obj.get("family", "zipf")).lower()
    if family not in ("zipf", "logzipf"):
        r.fail(f"{path}.family", "overlap classes must be zipf or logzipf")
    alphas = _per_class(r, obj, "alphas", path)
    cs = None if obj.get("cs", "auto") == "auto" else _per_class(r, obj, "cs", path)
    ns = _per_class(r, obj, "N", path, integer=True)
    fams = {}
    for c in "ABD":
        spec = {"family": family, "alpha": alphas[c]}
        if cs is not None:
            spec["c"] = cs[c]
        fams[c] = _family(r, spec, f"{path}.alphas")
    try:
        return OverlapSpec(classes=fams, sizes=ns, **kw)
    except ConfigError as e:
        r.fail(path, str(e))


def _capacities(r: _Reader, v):
    if isinstance(v, dict) and "log_range" in v:
        lo, hi, n = r.numbers(v["log_range"], "capacities.log_range", 3)
        if lo <= 0 or hi < lo or n < 1 or n != int(n):
            r.fail("capacities.log_range", "needs 0 < low <= high and an integer count >= 1")
        caps = np.unique(np.round(np.geomspace(lo, hi, int(n))))
    elif isinstance(v, list):
        caps = np.asarray(r.numbers(v, "capacities"))
    else:
        r.fail("capacities", "must be a list or an object with 'log_range'")
    if len(caps) == 0:
        r.fail("capacities", "must not be empty")
    if np.any(caps <= 0) or np.any(np.diff(caps) <= 0):
        r.fail("capacities", "must be positive and strictly ascending")
    return caps


def parse_scenario(text: str, source=None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(e.msg, line=e.lineno, source=source) from None
    r = _Reader(text, source)
    if not isinstance(data, dict):
        r.fail(None, "top level must be an object")
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        r.fail(sorted(unknown)[0], "unknown key")
    flows = _flows(r, data)
    overlap = _overlap(r, data["overlap"]) if data.get("overlap") is not None else None
    schedule = None
    if data.get("schedule") is not None:
        segs = data["schedule"]
        if not isinstance(segs, list) or not segs:
            r.fail("schedule", "must be a non-empty list of {requests, nu}")
        parts = []
        for j, seg in enumerate(segs):
            path = f"schedule[{j}]"
            if not isinstance(seg, dict):
                r.fail(path, "must be an object")
            parts.append((r.number(seg, "requests", path, integer=True, positive=True),
                          tuple(r.numbers(seg.get("nu"), f"{path}.nu", len(flows)))))
        try:
            schedule = RateSchedule(tuple(parts))
        except ConfigError as e:
            r.fail("schedule", str(e))
    if "capacities" not in data:
        r.fail("capacities", "is required")
    caps = _capacities(r, data["capacities"])
    requests = r.number(data, "requests", "", integer=True, positive=True)
    warmup = data.get("warmup", "auto")
    if warmup == "auto" or warmup is None:
        warmup = None
    else:
        warmup = r.number(data, "warmup", "", integer=True)
        if not 0 <= warmup < requests:
            r.fail("warmup", f"must lie in [0, requests), got {warmup}")
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            r.fail("seeds", "must be a non-empty list of non-negative integers")
        seeds = tuple(seeds)
    else:
        seeds = (r.number(data, "seed", "", default=0, integer=True, required=False),)
    methods = data.get("methods", ["che"])
    if not isinstance(methods, list) or not methods:
        r.fail("methods", "must be a non-empty list")
    for m in methods:
        if m not in METHODS:
            r.fail("methods", f"unknown method {m!r}; choose from {list(METHODS)}")
    sep = data.get("separation")
    if sep is not None and sep not in ("optimal", "dedicated"):
        sep = tuple(r.numbers(sep, "separation", len(flows)))
        if min(sep) < 0 or abs(math.fsum(sep) - 1) > 1e-12:
            r.fail("separation", "fractions must be non-negative and sum to 1")
    plan = data.get("plan", {}) or {}
    if not isinstance(plan, dict) or set(plan) - {"u", "nu1"}:
        r.fail("plan", "may only contain 'u' and 'nu1'")
    if "u" in plan:
        plan["u"] = r.numbers(plan["u"], "plan.u", len(flows))
    if "nu1" in plan:
        plan["nu1"] = r.numbers(plan["nu1"], "plan.nu1")
    start = data.get("start", "stationary")
    if start not in ("stationary", "cold"):
        r.fail("start", "must be 'stationary' or 'cold'")
    budget = r.number(data, "time_budget", "", positive=True, required=False)
    x_min = r.number(data, "x_min", "", positive=True, required=False)
    return Scenario(
        name=str(data.get("name", Path(str(source)).stem if source else "scenario")),
        flows=flows,
        capacities=caps,
        requests=requests,
        overlap=overlap,
        schedule=schedule,
        warmup=warmup,
        seeds=seeds,
        catalog_seed=r.number(data, "catalog_seed", "", default=0, integer=True, required=False),
        methods=tuple(methods),
        separation=sep,
        plan=plan,
        x_min=x_min,
        time_budget=budget,
        start=start,
        description=str(data.get("description", "")),
    )


def bundled_scenarios() -> list:
    return sorted(p.name[: -len(".scenario")] for p in resources.files("cachepool.scenarios").iterdir()
                  if p.name.endswith(".scenario"))


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario from a path, or by name from the bundled set."""
    path = Path(path_or_name)
    if path.exists():
        return parse_scenario(path.read_text(), source=path)
    name = str(path_or_name)
    if name.endswith(".scenario"):
        name = name[: -len(".scenario")]
    res = resources.files("cachepool.scenarios").joinpath(f"{name}.scenario")
    if res.is_file():
        return parse_scenario(res.read_text(), source=f"{name}.scenario")
    raise ScenarioError(f"no such scenario file or bundled scenario {path_or_name!r}")
