"""Miss-ratio predictors for LRU caches shared by several IRM flows.

Four families of predictors live here:

* exact finite sums over the catalog (``m``, the inverse ``m_invert`` and the
  tail ``sigma_tail`` of the inter-request distance),
* the characteristic-time (Che) approximation,
* the regularly-varying asymptotic ``Gamma(beta+1) / Phi_k(m_inverse(x))``
  evaluated from catalog data,
* closed forms for Zipf, log-Zipf, Weibull and mixtures of Zipf flows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ExtrapolationError, SaturationError, UnsupportedConfigurationError
from .workload import Catalog, Constant, LogZipf, Weibull, Zipf

log = logging.getLogger(__name__)

EULER_GAMMA = 0.57721566490153286061  # Euler-Mascheroni constant, OEIS A001620
LOG10 = math.log(10.0)


# --------------------------------------------------------------------------
# fast exponential sums


class ExpSum:
    """Evaluate ``G(z) = sum_i w_i exp(-z L_i)`` and ``F(z) = W - G(z)``.

    Items are sorted by rate and grouped into octaves ``(tau_{b+1}, tau_b]``
    with ``tau_b = L_max 2**-b``.  For a given ``z`` the items with
    ``z L_i <= DELTA`` are summed through precomputed Taylor moments, the
    rest exactly.  With ``DELTA=0.5`` and 14 terms the truncation error is
    below ``2e-15`` relative per item.
    """

    DELTA = 0.5
    ORDER = 14

    def __init__(self, weights, rates):
        w = np.asarray(weights, dtype=float)
        L = np.asarray(rates, dtype=float)
        keep = w > 0
        w, L = w[keep], L[keep]
        inf = np.isinf(L)
        self.w_inf = math.fsum(w[inf])
        w, L = w[~inf], L[~inf]
        if np.any(L <= 0):
            raise DomainError("rates must be positive")
        order = np.argsort(-L, kind="stable")
        self.w = np.ascontiguousarray(w[order])
        self.L = np.ascontiguousarray(L[order])
        self.total = math.fsum(self.w) + self.w_inf
        self._build_levels()

    def _build_levels(self):
        n, J = len(self.L), self.ORDER
        if n == 0:
            self.tau = np.zeros(0)
            self.bounds = np.zeros(0, dtype=np.int64)
            self.moments = np.zeros((0, J + 1))
            return
        lmax, lmin = self.L[0], self.L[-1]
        levels = int(math.ceil(math.log2(lmax / lmin))) + 2
        tau = lmax * 2.0 ** -np.arange(levels)
        # bounds[b] = number of items with L > tau[b]
        bounds = np.searchsorted(-self.L, -tau, side="left")
        edges = np.append(bounds, n)
        block = np.zeros((levels, J + 1))
        for b in range(levels):
            lo, hi = edges[b], edges[b + 1]
            if hi <= lo:
                continue
            ratio = self.L[lo:hi] / tau[b]
            term = self.w[lo:hi].copy()
            for j in range(J + 1):
                block[b, j] = term.sum()
                term *= ratio
        # suffix moments scaled to each level: S[m, j] = sum_{L <= tau_m} w (L / tau_m)^j
        S = np.zeros((levels, J + 1))
        acc = np.zeros(J + 1)
        halves = 0.5 ** np.arange(J + 1)
        for b in range(levels - 1, -1, -1):
            acc = acc * halves + block[b]
            S[b] = acc
        self.tau, self.bounds, self.moments = tau, bounds, S
        self._fact = np.array([math.factorial(j) for j in range(J + 1)], dtype=float)

    def _split(self, z):
        if len(self.tau) == 0:
            return 0, None
        target = self.DELTA / z
        if target >= self.tau[0]:
            return 0, 0
        m = int(math.ceil(math.log2(self.tau[0] / target)))
        while m < len(self.tau) and self.tau[m] > target:
            m += 1
        if m >= len(self.tau):
            return len(self.L), None
        return int(self.bounds[m]), m

    def _tail_terms(self, z, m):
        J = self.ORDER
        y = z * self.tau[m]
        powers = (-y) ** np.arange(J + 1) / self._fact
        return powers * self.moments[m]

    def decayed(self, z: float) -> float:
        """``G(z)``: surviving weight."""
        if z < 0:
            raise DomainError("z must be non-negative")
        if z == 0:
            return self.total
        head, m = self._split(z)
        g = float(np.dot(self.w[:head], np.exp(-z * self.L[:head])))
        if m is not None:
            g += math.fsum(self._tail_terms(z, m))
        return g

    def filled(self, z: float) -> float:
        """``F(z) = W - G(z)`` without cancellation."""
        if z < 0:
            raise DomainError("z must be non-negative")
        if z == 0:
            return 0.0
        head, m = self._split(z)
        f = float(np.dot(self.w[:head], -np.expm1(-z * self.L[:head]))) + self.w_inf
        if m is not None:
            f -= math.fsum(self._tail_terms(z, m)[1:])
        return f

    def decayed_exact(self, z: float) -> float:
        if z == 0:
            return self.total
        return float(np.dot(self.w, np.exp(-z * self.L)))

    def filled_exact(self, z: float) -> float:
        if z == 0:
            return 0.0
        return float(np.dot(self.w, -np.expm1(-z * self.L))) + self.w_inf


# --------------------------------------------------------------------------
# model over a catalog


class PhiCurve:
    """Monotone log-log interpolant through ``(1/p_y, 1/Q_y)`` of one flow.

    Items are ordered by non-increasing mixed probability ``p``; ``Q_y`` is
    the flow's conditional mass from position ``y`` on in that order.
    """

    def __init__(self, p_sorted: np.ndarray, q_in_p_order: np.ndarray):
        keep = p_sorted > 0
        p, q = p_sorted[keep], q_in_p_order[keep]
        Q = np.cumsum(q[::-1])[::-1]
        lx = -np.log(p)
        ly = -np.log(Q)
        # equal p values: keep the first point of each tie group
        first = np.concatenate([[True], np.diff(lx) > 0])
        lx, ly = lx[first], np.maximum.accumulate(ly[first])
        if len(lx) < 2:
            raise UnsupportedConfigurationError("flow needs at least two distinct popularities")
        self.lx, self.ly = lx, ly
        self.lo, self.hi = math.exp(lx[0]), math.exp(lx[-1])
        self._end_slopes = (self._chord(lx[0], lx[0] + LOG10), self._chord(lx[-1] - LOG10, lx[-1]))

    def _chord(self, a, b):
        a, b = max(a, self.lx[0]), min(b, self.lx[-1])
        if b <= a:
            return 0.0
        ya, yb = np.interp([a, b], self.lx, self.ly)
        return (yb - ya) / (b - a)

    def log_phi(self, z: float) -> float:
        t = math.log(z)
        if t < self.lx[0]:
            return self.ly[0] + self._end_slopes[0] * (t - self.lx[0])
        if t > self.lx[-1]:
            return self.ly[-1] + self._end_slopes[1] * (t - self.lx[-1])
        return float(np.interp(t, self.lx, self.ly))

    def __call__(self, z: float) -> float:
        return math.exp(self.log_phi(z))

    def covers(self, z: float) -> bool:
        return self.lo <= z <= self.hi

    def slope(self, z: float) -> float:
        """Centered log-log slope over one decade around ``z``."""
        t = math.log(z)
        a, b = t - LOG10 / 2, t + LOG10 / 2
        span = self.lx[-1] - self.lx[0]
        if span >= LOG10:
            shift = max(self.lx[0] - a, 0.0) - max(b - self.lx[-1], 0.0)
            a, b = a + shift, b + shift
        return (self.log_phi(math.exp(b)) - self.log_phi(math.exp(a))) / (b - a)


class AnalyticModel:
    """Precomputed sums over a catalog; immutable and safe to share."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        p, s = catalog.p, catalog.sizes.astype(float)
        live = p > 0
        certain = p >= 1.0
        self._step_mass = float(s[certain].sum())
        soft = live & ~certain
        self._m = ExpSum(s[soft], -np.log1p(-p[soft]))
        self._mbar = ExpSum(s[live], p[live])
        self.total_size = float(s[live].sum())
        self._warned_alpha = False

    # m(z) and the Che balance function
    def m(self, z: float, exact: bool = False) -> float:
        """Expected total size of distinct items among ``z`` requests."""
        if z < 0:
            raise DomainError("z must be non-negative")
        soft = self._m.filled_exact(z) if exact else self._m.filled(z)
        return soft + (self._step_mass if z >= 1 else 0.0)

    def m_bar(self, z: float, exact: bool = False) -> float:
        """``sum_i s_i (1 - exp(-p_i z))``."""
        return self._mbar.filled_exact(z) if exact else self._mbar.filled(z)

    @cached_property
    def flow_sums(self) -> list:
        return [ExpSum(f.q, self.catalog.flow_p(k)) for k, f in enumerate(self.catalog.flows)]

    @cached_property
    def _own_sums(self) -> list:
        return [ExpSum(self.catalog.sizes[f.items].astype(float), f.q) for f in self.catalog.flows]

    def m_bar_flow(self, k: int, z: float) -> float:
        """``sum_i s_i^(k) (1 - exp(-q_i^(k) z))`` over flow ``k``'s own items."""
        return self._own_sums[k].filled(z)

    def phi(self, k: int) -> PhiCurve:
        return self._phis[k]

    @cached_property
    def _phis(self) -> list:
        out = []
        for k, f in enumerate(self.catalog.flows):
            order = self.catalog.order_by_p(k)
            out.append(PhiCurve(self.catalog.flow_p(k)[order], f.q[order]))
        return out

    def warn_small_alpha(self):
        if self._warned_alpha or not self.catalog.specs:
            return
        for spec in self.catalog.specs:
            fam = spec.popularity
            if isinstance(fam, (Zipf, LogZipf)) and fam.alpha < 1.2:
                log.warning("alpha=%g < 1.2: the asymptotic predictor converges slowly", fam.alpha)
        self._warned_alpha = True


# --------------------------------------------------------------------------
# root finding


def _bisect_log(f, target: float, limit: float, what: str) -> float:
    """Smallest ``z`` with ``f(z) >= target`` for increasing ``f``, on log scale."""
    if target <= 0:
        return 0.0
    if target >= limit:
        raise SaturationError(f"{what}: capacity {target} >= total size mass {limit}")
    lo, hi = 1.0, 1.0
    if f(hi) >= target:
        while f(lo) >= target:
            lo /= 2.0
            if lo < 1e-300:
                return 0.0
        hi = 2.0 * lo
    else:
        while f(hi) < target:
            lo, hi = hi, hi * 2.0
            if hi > 1e300:
                raise SaturationError(f"{what}: capacity {target} not reached by any finite z")
    for _ in range(200):
        if hi / lo - 1.0 < 1e-13:
            break
        mid = math.sqrt(lo * hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def m_eval(model: AnalyticModel, z: float, exact: bool = False) -> float:
    return model.m(z, exact=exact)


def m_invert(model: AnalyticModel, x: float) -> float:
    """``z`` with ``m(z) = x``; the generalized inverse where ``m`` jumps."""
    if x < 0:
        raise DomainError("capacity must be non-negative")
    return _bisect_log(model.m, x, model.total_size, "m_invert")


def che_time(model: AnalyticModel, x: float, check: bool = False) -> float:
    """Characteristic time ``T`` solving ``sum_i s_i (1 - exp(-p_i T)) = x``."""
    if x <= 0:
        raise DomainError("capacity must be positive")
    T = _bisect_log(model.m_bar, x, model.total_size, "che_time")
    if check and x >= 100 * model.catalog.mean_size:
        z = m_invert(model, x)
        if abs(T - z) > 0.01 * z:
            log.warning("characteristic time %g and m_inverse %g differ by more than 1%%", T, z)
    return T


def sigma_tail(catalog: Catalog, k: int, n: float) -> float:
    """``P[sigma > n | flow k] = sum_i q_i (1 - p_i)^n`` as an exact finite sum."""
    if n < 0:
        raise DomainError("n must be non-negative")
    f = catalog.flows[k]
    p = catalog.flow_p(k)
    if n == 0:
        return float(np.sum(f.q))
    with np.errstate(divide="ignore"):
        surv = np.where(p < 1.0, np.exp(n * np.log1p(-np.minimum(p, 1.0))), 0.0)
    return float(np.dot(f.q, surv))


def m_decomposed(model: AnalyticModel, z: float) -> float:
    """``sum_k m_bar^(k)(nu_k z)`` for catalogs without overlapped items."""
    if model.catalog.overlap is not None:
        raise UnsupportedConfigurationError("decomposition needs disjoint flows")
    return math.fsum(model.m_bar_flow(k, nu * z) for k, nu in enumerate(model.catalog.nu))


# --------------------------------------------------------------------------
# predictors


class Prediction(NamedTuple):
    per_flow: np.ndarray
    overall: float
    t: float  # characteristic time / number of requests used


def predict_che(model: AnalyticModel, x: float) -> Prediction:
    """Che approximation: flow ``k`` misses with ``sum_i q_i exp(-p_i T)``."""
    T = che_time(model, x)
    per_flow = np.array([s.decayed(T) for s in model.flow_sums])
    return Prediction(per_flow, float(np.dot(model.catalog.nu, per_flow)), T)


class AsymptoticPrediction(NamedTuple):
    miss: float
    beta: float
    z: float
    extrapolated: bool


def predict_asymptotic(
    model: AnalyticModel,
    k: int,
    x: float,
    beta: float | None = None,
    allow_extrapolation: bool = False,
) -> AsymptoticPrediction:
    """``Gamma(beta_k + 1) / Phi_k(m_inverse(x))`` with ``Phi_k`` from catalog data."""
    model.warn_small_alpha()
    z = m_invert(model, x)
    phi = model.phi(k)
    outside = not phi.covers(z)
    if outside and not allow_extrapolation:
        raise ExtrapolationError(
            f"m_inverse({x})={z:.6g} outside the catalog range [{phi.lo:.6g}, {phi.hi:.6g}]"
        )
    b = phi.slope(z) if beta is None else float(beta)
    miss = math.gamma(b + 1.0) / phi(z)
    return AsymptoticPrediction(min(miss, 1.0), b, z, outside)


# --------------------------------------------------------------------------
# closed forms


class ClosedForm(NamedTuple):
    miss: float
    ratio: float  # limit of P[C > x] / P[R > x]


def zipf_ratio_constant(alpha: float) -> float:
    return (1 - 1 / alpha) * math.gamma(1 - 1 / alpha) ** alpha


def closed_zipf(alpha: float, c: float, l_kind: str, x: float) -> ClosedForm:
    """Single-flow, unit-size Zipf miss probability for large ``x``.

    ``l_kind="constant"`` treats ``q_i ~ c / i**alpha``; ``"log"`` treats
    ``q_i ~ c log(i) / i**alpha`` by replacing ``c`` with ``c log x``.
    """
    if alpha <= 1:
        raise DomainError(f"closed Zipf forms need alpha > 1, got {alpha}")
    if l_kind == "constant":
        lx = c
    elif l_kind == "log":
        lx = c * math.log(x)
    else:
        raise UnsupportedConfigurationError(f"slowly varying factor {l_kind!r} not supported")
    g = math.gamma(1 - 1 / alpha)
    pref = math.gamma(2 - 1 / alpha) * g ** (alpha - 1) / (alpha - 1)
    return ClosedForm(pref * lx / x ** (alpha - 1), zipf_ratio_constant(alpha))


def closed_weibull(xi: float, c: float, x: float) -> ClosedForm:
    """Single-flow Weibull ``q_i ~ c exp(-i**xi)``: ``(e^gamma c / xi) x^(1-xi) exp(-x^xi)``."""
    if not 0 < xi < 1:
        raise DomainError(f"weibull shape must lie in (0, 1), got {xi}")
    if xi >= 1 / 3:
        log.warning("xi=%g >= 1/3 is outside the range where this limit is established", xi)
    e_gamma = math.exp(EULER_GAMMA)
    return ClosedForm(e_gamma * c / xi * x ** (1 - xi) * math.exp(-(x**xi)), e_gamma)


@dataclass(frozen=True)
class MultiZipfModel:
    """Disjoint Zipf flows with per-flow constant item sizes."""

    alphas: tuple
    cs: tuple
    nus: tuple
    sizes: tuple

    def __post_init__(self):
        n = len(self.alphas)
        if not (len(self.cs) == len(self.nus) == len(self.sizes) == n) or n == 0:
            raise DomainError("alphas, cs, nus and sizes need one entry per flow")
        if min(self.alphas) <= 1:
            raise DomainError(f"every alpha must exceed 1, got {self.alphas}")
        if min(self.cs) <= 0 or min(self.nus) <= 0 or min(self.sizes) <= 0:
            raise DomainError("c, nu and sizes must be positive")
        if abs(math.fsum(self.nus) - 1) > 1e-12:
            raise DomainError(f"nus sum to {math.fsum(self.nus)}, not 1")
        for f in ("alphas", "cs", "nus", "sizes"):
            object.__setattr__(self, f, tuple(float(v) for v in getattr(self, f)))

    @classmethod
    def from_catalog(cls, catalog: Catalog) -> "MultiZipfModel":
        if catalog.overlap is not None or not catalog.specs:
            raise UnsupportedConfigurationError("closed multi-flow forms need disjoint flow specs")
        alphas, cs, sizes = [], [], []
        for k, spec in enumerate(catalog.specs):
            fam = spec.popularity
            if type(fam) is not Zipf or fam.head:
                raise UnsupportedConfigurationError(f"flow {k + 1} is not a plain Zipf flow")
            if not isinstance(spec.size_rule, Constant):
                raise UnsupportedConfigurationError(f"flow {k + 1} has random item sizes")
            alphas.append(fam.alpha)
            cs.append(fam.c if fam.c is not None else catalog.constants[str(k + 1)])
            sizes.append(spec.size_rule.s)
        return cls(tuple(alphas), tuple(cs), tuple(catalog.nu), tuple(sizes))

    @property
    def alpha1(self) -> float:
        return min(self.alphas)

    @property
    def S1(self) -> list:
        return [k for k, a in enumerate(self.alphas) if a == self.alpha1]

    @property
    def alpha2(self) -> float | None:
        rest = [a for a in self.alphas if a != self.alpha1]
        return min(rest) if rest else None

    @property
    def S2(self) -> list:
        a2 = self.alpha2
        return [k for k, a in enumerate(self.alphas) if a == a2] if a2 is not None else []

    def _gamma(self, alpha, members):
        return math.gamma(1 - 1 / alpha) * math.fsum(
            self.sizes[k] * (self.cs[k] * self.nus[k]) ** (1 / alpha) for k in members
        )

    @property
    def gamma1(self) -> float:
        return self._gamma(self.alpha1, self.S1)

    @property
    def gamma2(self) -> float:
        return self._gamma(self.alpha2, self.S2) if self.alpha2 is not None else 0.0

    def m_inverse(self, x: float, refined: bool = False) -> float:
        """Asymptotic number of requests filling capacity ``x``."""
        a1, g1 = self.alpha1, self.gamma1
        if not refined or self.alpha2 is None:
            return (x / g1) ** a1
        return x**a1 / (g1 + self.gamma2 * (x / g1) ** (a1 / self.alpha2 - 1)) ** a1


def closed_multi_zipf(mz: MultiZipfModel, x: float, refined: bool = False) -> np.ndarray:
    """Per-flow pooled miss probabilities for disjoint Zipf flows.

    Flow ``k`` misses with ``Gamma(2 - 1/a_k) / Phi_k(T)`` where
    ``Phi_k(T) = (a_k - 1) c_k^(-1/a_k) (nu_k T)^(1 - 1/a_k)`` and ``T`` is the
    closed-form inverse of ``m`` (optionally with the second-exponent term).
    """
    T = mz.m_inverse(x, refined)
    out = []
    for a, c, nu in zip(mz.alphas, mz.cs, mz.nus):
        phi = (a - 1) * c ** (-1 / a) * (nu * T) ** (1 - 1 / a)
        out.append(math.gamma(2 - 1 / a) / phi)
    return np.array(out)
