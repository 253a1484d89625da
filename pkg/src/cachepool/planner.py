"""Pooling versus separation: optimal static splits, ratios and good regions.

All closed-form answers here are asymptotic in the cache size.  For finite
capacities the Che predictor gives a numeric comparison through
:func:`che_plan`.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .analytic import AnalyticModel, closed_multi_zipf, MultiZipfModel, predict_che
from .errors import DomainError, SaturationError, UnsupportedConfigurationError
from .workload import Catalog

log = logging.getLogger(__name__)

SIZE_TOL = 1e-9
GOLDEN = (math.sqrt(5) - 1) / 2

# predictor(k, capacity) -> miss probability of flow k alone in a cache of that size
SeparatedPredictor = Callable[[int, float], float]


@dataclass(frozen=True)
class PlanFlow:
    """One Zipf flow as seen by the planner: ``q_i ~ c / i**alpha``, rate ``nu``, item size ``size``."""

    alpha: float
    c: float
    nu: float
    size: float = 1.0

    def __post_init__(self):
        if self.alpha <= 1:
            raise DomainError(f"planner needs alpha > 1, got {self.alpha}")
        if self.c <= 0 or self.nu <= 0 or self.size <= 0:
            raise DomainError("c, nu and size must be positive")


@dataclass
class PartitionPlan:
    """A static split ``u`` together with predicted per-flow miss probabilities."""

    u: np.ndarray
    separated: np.ndarray
    pooled: np.ndarray
    nu: np.ndarray
    ratio: float  # overall pooled / overall separated
    verdict: str  # pool | separate | equivalent
    asymptotic: bool = True
    x: float | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if abs(self.u.sum() - 1) > 1e-12 or np.any(self.u < 0):
            raise DomainError(f"split {self.u} is not a point of the simplex")

    @property
    def overall_separated(self) -> float:
        return float(np.dot(self.nu, self.separated))

    @property
    def overall_pooled(self) -> float:
        return float(np.dot(self.nu, self.pooled))


def _common_alpha(flows: Sequence[PlanFlow]) -> float | None:
    alphas = {f.alpha for f in flows}
    return alphas.pop() if len(alphas) == 1 else None


def _s1(flows: Sequence[PlanFlow]) -> list:
    a1 = min(f.alpha for f in flows)
    return [k for k, f in enumerate(flows) if f.alpha == a1]


def _weights(flows, alpha):
    return np.array([(f.c * f.nu) ** (1 / alpha) for f in flows])


def _eq31(flows, alpha):
    w = _weights(flows, alpha) * np.array([f.size ** (1 - 1 / alpha) for f in flows])
    return w / w.sum()


def zipf_separation_predictor(flows: Sequence[PlanFlow]) -> SeparatedPredictor:
    """Asymptotic miss of flow ``k`` alone in a cache of the given size."""

    def predict(k: int, cap: float) -> float:
        f = flows[k]
        if cap <= 0:
            return 1.0
        g = math.gamma(1 - 1 / f.alpha) ** f.alpha / f.alpha
        return min(1.0, g * f.c * (f.size / cap) ** (f.alpha - 1))

    return predict


def optimal_split_zipf(flows: Sequence[PlanFlow], x: float | None = None) -> np.ndarray:
    """Overall-miss-minimizing static split for Zipf flows.

    With a common exponent ``u_k ~ (c_k nu_k)^(1/alpha) s_k^(1 - 1/alpha)``.
    With different exponents only the flows of the smallest exponent matter
    asymptotically; given ``x`` the split is found numerically from that
    warm start, otherwise the other flows receive zero.
    """
    flows = list(flows)
    if len(flows) == 1:
        return np.ones(1)
    alpha = _common_alpha(flows)
    if alpha is not None:
        return _eq31(flows, alpha)
    s1 = _s1(flows)
    u = np.zeros(len(flows))
    u[s1] = _eq31([flows[k] for k in s1], flows[s1[0]].alpha)
    if x is None:
        return u
    warm = 0.5 * u + 0.5 / len(flows)
    res = optimize_split_numeric(
        zipf_separation_predictor(flows), [f.nu for f in flows], x, warm_start=warm
    )
    return res.u


def pooling_ratio(flows: Sequence[PlanFlow]) -> float:
    """Asymptotic overall pooled / optimally separated miss (at least 1)."""
    flows = list(flows)
    alpha = _common_alpha(flows)
    if alpha is None:
        flows = [flows[k] for k in _s1(flows)]
        alpha = flows[0].alpha
    w = _weights(flows, alpha)
    s = np.array([f.size for f in flows])
    num = w.sum() * np.dot(w, s) ** (alpha - 1)
    den = np.dot(w, s ** (1 - 1 / alpha)) ** alpha
    return float(num / den)


def _sizes_equal(flows) -> bool:
    s = [f.size for f in flows]
    return max(s) / min(s) - 1 <= SIZE_TOL


def pooling_vs_separation(flows: Sequence[PlanFlow], x: float | None = None) -> PartitionPlan:
    """Asymptotic comparison of pooling with the optimal static split.

    The verdict is ``equivalent`` when all item sizes agree and ``separate``
    otherwise.  When ``x`` is given the per-flow entries hold the asymptotic
    miss probabilities at that capacity; otherwise they are NaN.
    """
    flows = list(flows)
    ratio = pooling_ratio(flows)
    verdict = "equivalent" if _sizes_equal(flows) else "separate"
    nu = np.array([f.nu for f in flows])
    u = optimal_split_zipf(flows, x)
    notes = []
    if _common_alpha(flows) is None:
        notes.append("exponents differ: ratio restricted to flows with the smallest exponent")
    if x is None:
        nan = np.full(len(flows), np.nan)
        return PartitionPlan(u, nan, nan.copy(), nu, ratio, verdict, True, None, notes)
    sep = np.array([zipf_separation_predictor(flows)(k, u[k] * x) for k in range(len(flows))])
    mz = MultiZipfModel(
        tuple(f.alpha for f in flows), tuple(f.c for f in flows), tuple(nu / nu.sum()), tuple(f.size for f in flows)
    )
    pooled = np.minimum(closed_multi_zipf(mz, x, refined=False), 1.0)
    return PartitionPlan(u, sep, pooled, nu, ratio, verdict, True, x, notes)


class ImpactReport(NamedTuple):
    matrix: np.ndarray  # R[i, j] = pooled miss of flow i / pooled miss of flow j
    pooled_over_separated: np.ndarray  # asymptotically 1 for every flow


def per_flow_impact(flows: Sequence[PlanFlow]) -> ImpactReport:
    """Pairwise asymptotic per-flow miss ratios under pooling."""
    flows = list(flows)
    alpha = _common_alpha(flows)
    if alpha is None:
        raise DomainError("per-flow impact needs a common exponent")
    if not _sizes_equal(flows):
        raise UnsupportedConfigurationError("per-flow impact is defined for equal item sizes only")
    v = np.array([f.c ** (1 / alpha) * f.nu ** (1 / alpha - 1) for f in flows])
    R = v[:, None] / v[None, :]
    # pooled: G^a/a x^(1-a) (sum w)^(a-1) c_k^(1/a) nu_k^(1/a-1) s^(a-1)
    # separated at u*: G^a/a c_k (s / (u_k x))^(a-1) with u_k = w_k / sum w
    w = _weights(flows, alpha)
    pooled = w.sum() ** (alpha - 1) * v
    u = w / w.sum()
    sep = np.array([f.c for f in flows]) / u ** (alpha - 1)
    return ImpactReport(R, pooled / sep)


# --------------------------------------------------------------------------
# overlapped items (two flows, unit sizes)


@dataclass(frozen=True)
class OverlapParams:
    """Two flows sharing the class ``D``; flow 1 also has ``A``, flow 2 has ``B``."""

    nu1: float
    nu2: float
    cA: float
    cB: float
    cD: float
    alpha: float
    pA1: float
    pD1: float
    pB2: float
    pD2: float

    def __post_init__(self):
        if self.alpha <= 1:
            raise DomainError(f"overlap analysis needs alpha > 1, got {self.alpha}")
        if abs(self.pA1 + self.pD1 - 1) > 1e-12 or abs(self.pB2 + self.pD2 - 1) > 1e-12:
            raise DomainError("class weights of each flow must sum to 1")
        if abs(self.nu1 + self.nu2 - 1) > 1e-12:
            raise DomainError("flow rates must sum to 1")
        if min(self.nu1, self.nu2, self.cA, self.cB, self.cD) <= 0:
            raise DomainError("rates and constants must be positive")
        if min(self.pA1, self.pD1, self.pB2, self.pD2) < 0:
            raise DomainError("class weights must be non-negative")

    @property
    def pD_star(self) -> float:
        return self.pD1 * self.nu1 + self.pD2 * self.nu2

    def swapped(self) -> "OverlapParams":
        """The same system with the two flows relabelled."""
        return OverlapParams(
            self.nu2, self.nu1, self.cB, self.cA, self.cD, self.alpha, self.pB2, self.pD2, self.pA1, self.pD1
        )

    # K: pooled mixture weight; K_k: flow k's own mixture weight
    def _K(self) -> float:
        a = 1 / self.alpha
        return (
            (self.cA * self.pA1 * self.nu1) ** a
            + (self.cB * self.pB2 * self.nu2) ** a
            + (self.cD * self.pD_star) ** a
        )

    def _K1(self) -> float:
        a = 1 / self.alpha
        return (self.cA * self.pA1) ** a + (self.cD * self.pD1) ** a

    def _pooled_bracket(self) -> float:
        a = 1 / self.alpha
        tail = self.cD**a * self.pD1 / self.pD_star ** (1 - a) if self.pD1 > 0 else 0.0
        return (self.cA * self.pA1) ** a / self.nu1 ** (1 - a) + tail


def _gpref(alpha):
    return math.gamma(1 - 1 / alpha) ** alpha / alpha


def overlap_pooled_miss(params: OverlapParams, x: float) -> np.ndarray:
    """Asymptotic per-flow miss of the shared cache, capped at 1."""
    a = params.alpha
    out = []
    for p in (params, params.swapped()):
        out.append(_gpref(a) * x ** (1 - a) * p._K() ** (a - 1) * p._pooled_bracket())
    return np.minimum(out, 1.0)


def overlap_separated_miss(params: OverlapParams, x: float, u: Sequence[float]) -> np.ndarray:
    """Asymptotic per-flow miss when flow ``k`` owns ``u_k x`` of the cache, capped at 1."""
    a = params.alpha
    out = [1.0 if uk <= 0 else _gpref(a) * (uk * x) ** (1 - a) * p._K1() ** a for uk, p in zip(u, (params, params.swapped()))]
    return np.minimum(out, 1.0)


def overlap_optimal_split(params: OverlapParams) -> np.ndarray:
    """Split minimizing the overall separated miss: ``u_k ~ nu_k^(1/alpha) K_k``."""
    a = params.alpha
    w = np.array([p.nu1 ** (1 / a) * p._K1() for p in (params, params.swapped())])
    return w / w.sum()


class GoodRegion(NamedTuple):
    member: bool
    margin: float  # smaller normalized slack (lhs - rhs) / lhs
    margins: tuple


def good_region(params: OverlapParams, u: Sequence[float]) -> GoodRegion:
    """Whether pooling asymptotically beats the split ``u`` for both flows."""
    u = tuple(float(v) for v in u)
    if len(u) != 2 or min(u) <= 0 or abs(sum(u) - 1) > 1e-12:
        raise DomainError(f"split must be two positive fractions summing to 1, got {u}")
    if params.pD_star <= 0:
        raise DomainError("good region is defined only with shared items (pD* > 0)")
    a = params.alpha
    margins = []
    for uk, p in zip(u, (params, params.swapped())):
        lhs = p._K1() ** a / p._K() ** (a - 1)
        rhs = uk ** (a - 1) * p._pooled_bracket()
        margins.append((lhs - rhs) / lhs)
    return GoodRegion(all(m > 0 for m in margins), min(margins), tuple(margins))


# --------------------------------------------------------------------------
# numeric split optimization


class SplitResult(NamedTuple):
    u: np.ndarray
    objective: float
    grid_fallback: bool


def _objective(predictor, nus, x, u):
    return math.fsum(nu * (1.0 if uk <= 0 else predictor(k, uk * x)) for k, (nu, uk) in enumerate(zip(nus, u)))


def _golden(f, a, b, tol):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def optimize_split_numeric(
    predictor: SeparatedPredictor,
    nus: Sequence[float],
    x: float,
    grid: int = 101,
    warm_start: Sequence[float] | None = None,
) -> SplitResult:
    """Minimize ``sum_k nu_k miss_k(u_k x)`` over the simplex.

    Two flows: grid bracketing then golden-section search to width ``1e-4``.
    More flows: pairwise coordinate descent from ``warm_start`` until a sweep
    improves the objective by less than a relative ``1e-9``.  If a flow's
    predicted miss is not monotone in capacity, the two-flow search returns
    the best grid point and flags it.
    """
    nus = np.asarray(nus, dtype=float)
    M = len(nus)
    if M == 1:
        return SplitResult(np.ones(1), _objective(predictor, nus, x, [1.0]), False)
    if M == 2:
        us = np.linspace(0.0, 1.0, grid)
        f1 = np.array([1.0 if v <= 0 else predictor(0, v * x) for v in us])
        f2 = np.array([1.0 if v >= 1 else predictor(1, (1 - v) * x) for v in us])
        obj = nus[0] * f1 + nus[1] * f2
        monotone = np.all(np.diff(f1) <= 1e-12 * np.maximum(f1[:-1], 1e-300)) and np.all(
            np.diff(f2) >= -1e-12 * np.maximum(f2[1:], 1e-300)
        )
        j = int(np.argmin(obj))
        best = (us[j], obj[j])
        if not monotone:
            log.warning("predicted miss is not monotone in capacity; using the grid optimum")
            return SplitResult(np.array([best[0], 1 - best[0]]), float(best[1]), True)
        lo, hi = us[max(j - 1, 0)], us[min(j + 1, grid - 1)]
        v, fv = _golden(lambda t: _objective(predictor, nus, x, (t, 1 - t)), lo, hi, 1e-4)
        if fv > best[1]:
            v, fv = best
        return SplitResult(np.array([v, 1 - v]), float(fv), False)

    u = np.full(M, 1.0 / M) if warm_start is None else np.asarray(warm_start, dtype=float)
    u = u / u.sum()
    cur = _objective(predictor, nus, x, u)
    for _ in range(200):
        start = cur
        for i, j in itertools.combinations(range(M), 2):
            total = u[i] + u[j]
            if total <= 0:
                continue

            def pair(t, i=i, j=j, total=total):
                w = u.copy()
                w[i], w[j] = t, total - t
                return _objective(predictor, nus, x, w)

            t, ft = _golden(pair, 0.0, total, 1e-6 * total)
            if ft < cur:
                u[i], u[j] = t, total - t
                cur = ft
        if start - cur < 1e-9 * start:
            break
    return SplitResult(u, cur, False)


# --------------------------------------------------------------------------
# finite-capacity comparison through the Che predictor


def che_separation_predictor(catalog: Catalog) -> SeparatedPredictor:
    """Che miss of flow ``k`` served alone, with its own catalog items only."""
    models = {}

    def predict(k: int, cap: float) -> float:
        if cap <= 0:
            return 1.0
        if k not in models:
            models[k] = AnalyticModel(catalog.flow_only(k))
        m = models[k]
        if cap >= m.total_size:
            return 0.0
        try:
            return float(predict_che(m, cap).per_flow[0])
        except SaturationError:
            return 0.0

    return predict


def che_plan(catalog: Catalog, x: float, u: Sequence[float] | None = None, grid: int = 101) -> PartitionPlan:
    """Finite-capacity comparison: Che pooled vs Che separated at split ``u``.

    ``u=None`` optimizes the split numerically.
    """
    pooled = predict_che(AnalyticModel(catalog), x).per_flow
    pred = che_separation_predictor(catalog)
    nu = np.asarray(catalog.nu, dtype=float)
    if u is None:
        u = optimize_split_numeric(pred, nu, x, grid=grid).u
    u = np.asarray(u, dtype=float)
    sep = np.array([pred(k, u[k] * x) for k in range(len(nu))])
    ov_p, ov_s = float(np.dot(nu, pooled)), float(np.dot(nu, sep))
    ratio = ov_p / ov_s if ov_s > 0 else math.inf
    if abs(ratio - 1) <= 1e-9:
        verdict = "equivalent"
    else:
        verdict = "pool" if ratio < 1 else "separate"
    return PartitionPlan(u, sep, pooled, nu, ratio, verdict, asymptotic=False, x=x)
