"""Flow specifications, finite catalogs and IRM request streams.

A catalog is the union universe of data items requested by all flows.  Each
flow ``k`` carries conditional popularities ``q[k]`` over its own items and a
mixing probability ``nu[k]``; the mixed popularity of item ``i`` is
``p[i] = sum_k nu[k] * P[item i | flow k]``.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy import special

from .errors import BoundsError, ConfigError, DomainError, UnsupportedConfigurationError

log = logging.getLogger(__name__)

SUM_TOL = 1e-12
NORM_TOL = 1e-9


# --------------------------------------------------------------------------
# random streams


def make_rng(seed: int, *stream: int, scenario: str = "") -> np.random.Generator:
    """Counter-based generator keyed by ``(scenario, seed, *stream)``.

    Philox is counter based, so any key can be materialized independently of
    the others and parallel sweeps stay reproducible.
    """
    key = (zlib.crc32(scenario.encode()),) + tuple(int(s) for s in stream)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


# streams used inside one seed
STREAM_SIZES = 0
STREAM_REQUESTS = 1
STREAM_INIT = 2


# --------------------------------------------------------------------------
# popularity families


def _check_head(head):
    head = tuple(float(h) for h in head)
    if any(h <= 0 for h in head) or sum(head) >= 1:
        raise ConfigError(f"head masses must be positive and sum below 1, got {head}")
    return head


@dataclass(frozen=True)
class Zipf:
    """``q_i = c / i**alpha`` after the explicit head masses.

    ``c=None`` means the constant is recomputed from the finite catalog.
    ``truncated=True`` admits ``alpha <= 1`` as a purely finite catalog.
    """

    alpha: float
    c: float | None = None
    head: tuple = ()
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "head", _check_head(self.head))
        if self.alpha <= 0:
            raise ConfigError(f"zipf alpha must be positive, got {self.alpha}")
        if self.alpha <= 1 and not self.truncated:
            raise DomainError(
                f"zipf alpha={self.alpha} <= 1 has no infinite-catalog limit; "
                "set truncated=True to use it as a finite catalog only"
            )

    def shape(self, i: np.ndarray) -> np.ndarray:
        return i ** -float(self.alpha)


@dataclass(frozen=True)
class LogZipf:
    """``q_i = c * log(i) / i**alpha``; index 1 has zero mass unless in the head."""

    alpha: float
    c: float | None = None
    head: tuple = ()
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "head", _check_head(self.head))
        if self.alpha <= 1 and not self.truncated:
            raise DomainError(f"log-zipf alpha={self.alpha} must exceed 1")

    def shape(self, i: np.ndarray) -> np.ndarray:
        return np.log(i) * i ** -float(self.alpha)


@dataclass(frozen=True)
class Weibull:
    """Heavy-tailed Weibull popularity ``q_i = c * exp(-i**xi)``."""

    xi: float
    c: float | None = None
    head: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "head", _check_head(self.head))
        if not 0 < self.xi < 1:
            raise DomainError(f"weibull shape xi must lie in (0, 1), got {self.xi}")

    def shape(self, i: np.ndarray) -> np.ndarray:
        return np.exp(-(i ** float(self.xi)))


PopularityFamily = Union[Zipf, LogZipf, Weibull]


def family_masses(family: PopularityFamily, n: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalized masses of a family over indices ``1..n``.

    Returns ``(index, q, c)`` restricted to items of positive mass, where ``c``
    is the constant that normalizes the tail after the head masses.
    """
    head = np.asarray(family.head, dtype=float)
    h = len(head)
    if n < max(h + 1, 1):
        raise ConfigError(f"catalog size {n} too small for {h} head masses")
    idx = np.arange(h + 1, n + 1, dtype=np.int64)
    w = family.shape(idx.astype(float))
    total = math.fsum(w)
    if total <= 0:
        raise ConfigError(f"{family} puts no mass on indices {h + 1}..{n}")
    c = (1.0 - math.fsum(head)) / total
    q = np.concatenate([head, c * w])
    index = np.arange(1, n + 1, dtype=np.int64)
    keep = q > 0
    q = q[keep]
    q /= math.fsum(q)
    if family.c is not None and abs(family.c - c) > 1e-3 * c:
        log.warning("stated c=%g differs from normalized c=%g for %s", family.c, c, family)
    return index[keep], q, c


def tail_beyond(family: PopularityFamily, n: int, c: float) -> float:
    """Integral estimate of the mass an unbounded family puts past index ``n``.

    Finite catalogs drop this mass; infinite-catalog limits assume it is
    negligible.  Truncated families with ``alpha <= 1`` return ``inf``.
    """
    if isinstance(family, Weibull):
        s = 1.0 / family.xi
        return float(c * s * special.gamma(s) * special.gammaincc(s, n ** family.xi))
    a = family.alpha - 1.0
    if a <= 0:
        return math.inf
    if isinstance(family, LogZipf):
        return c * n ** -a * (math.log(n) / a + 1.0 / a**2)
    return c * n ** -a / a


@dataclass(frozen=True)
class Constant:
    s: int = 1

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise ConfigError(f"constant item size must be a positive integer, got {self.s}")

    def draw(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.full(n, int(self.s), dtype=np.int64)


@dataclass(frozen=True)
class Multinomial:
    """Sizes drawn i.i.d. per item from a finite support."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(int(s) for s in self.support)
        probs = tuple(float(p) for p in self.probs)
        if len(support) != len(probs) or not support:
            raise ConfigError("multinomial support and probs must be non-empty and equal length")
        if min(support) < 1 or min(probs) < 0:
            raise ConfigError("multinomial sizes must be >= 1 and probs non-negative")
        if abs(math.fsum(probs) - 1.0) > NORM_TOL:
            raise ConfigError(f"multinomial probs sum to {math.fsum(probs)}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = np.asarray(self.probs) / math.fsum(self.probs)
        return np.asarray(self.support, dtype=np.int64)[rng.choice(len(p), size=n, p=p)]


SizeRule = Union[Constant, Multinomial]


# --------------------------------------------------------------------------
# flows, overlap, schedules


@dataclass(frozen=True)
class FlowSpec:
    nu: float
    popularity: PopularityFamily | None = None
    catalog_size: int = 0
    size_rule: SizeRule = field(default_factory=Constant)
    class_weights: dict | None = None
    rate: float | None = None  # Poisson rate; metadata only under IRM

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ConfigError(f"mixing probability nu must lie in (0, 1], got {self.nu}")
        if self.class_weights is not None:
            tot = math.fsum(self.class_weights.values())
            if abs(tot - 1) > SUM_TOL or min(self.class_weights.values()) < 0:
                raise ConfigError(f"class weights {self.class_weights} must be >= 0 and sum to 1")


@dataclass(frozen=True)
class OverlapSpec:
    """Two flows over three disjoint classes: A (flow 1), B (flow 2), D (shared)."""

    pA1: float
    pD1: float
    pB2: float
    pD2: float
    classes: dict  # "A" | "B" | "D" -> PopularityFamily
    sizes: dict  # class -> catalog size

    def __post_init__(self):
        for a, b in ((self.pA1, self.pD1), (self.pB2, self.pD2)):
            if min(a, b) < 0 or abs(a + b - 1) > SUM_TOL:
                raise ConfigError(f"class weights ({a}, {b}) must be >= 0 and sum to 1")
        for cls in "ABD":
            if cls not in self.classes or cls not in self.sizes:
                raise ConfigError(f"overlap spec needs family and size for class {cls}")


@dataclass(frozen=True)
class RateSchedule:
    """Piecewise-constant mixing vectors, repeated cyclically.

    ``segments`` is a sequence of ``(duration_in_requests, nu_vector)``.
    """

    segments: tuple

    def __post_init__(self):
        segs = []
        for dur, nu in self.segments:
            nu = tuple(float(v) for v in nu)
            if int(dur) != dur or dur <= 0:
                raise ConfigError(f"segment duration must be a positive integer, got {dur}")
            if abs(math.fsum(nu) - 1) > SUM_TOL or min(nu) < 0:
                raise ConfigError(f"segment nu {nu} must be >= 0 and sum to 1")
            segs.append((int(dur), nu))
        if not segs:
            raise ConfigError("schedule needs at least one segment")
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def constant(cls, nu: Sequence[float]) -> "RateSchedule":
        return cls(((1 << 62, tuple(nu)),))

    @property
    def period(self) -> int:
        return sum(d for d, _ in self.segments)

    def pieces(self, start: int, n: int):
        """Yield ``(offset, length, nu)`` covering requests ``start .. start+n-1``."""
        period = self.period
        pos, end = start, start + n
        while pos < end:
            phase = pos % period
            acc = 0
            for dur, nu in self.segments:
                if phase < acc + dur:
                    length = min(acc + dur - phase, end - pos)
                    yield pos - start, length, nu
                    pos += length
                    break
                acc += dur


# --------------------------------------------------------------------------
# catalog


class ItemId(NamedTuple):
    cls: str
    index: int


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class FlowView:
    """Items of one flow with their conditional probabilities.

    ``items`` holds global item ids in the flow's family order (head first,
    then by family index).
    """

    def __init__(self, items: np.ndarray, q: np.ndarray):
        if len(items) != len(q) or len(items) == 0:
            raise ConfigError("a flow needs at least one item and matching q")
        if np.any(q < 0):
            raise ConfigError("conditional probabilities must be non-negative")
        self.items = _frozen(np.asarray(items, dtype=np.int64))
        self.q = _frozen(np.asarray(q, dtype=float))

    def __len__(self):
        return len(self.items)

    @cached_property
    def suffix(self) -> np.ndarray:
        """``suffix[y-1] = sum_{i>=y} q_i`` for ``y = 1..N+1``."""
        s = np.zeros(len(self.q) + 1)
        s[:-1] = np.cumsum(self.q[::-1])[::-1]
        return _frozen(s)

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.q)
        return _frozen(c / c[-1])

    def order_by_q(self) -> np.ndarray:
        """Positions of the flow's items sorted by non-increasing ``q``."""
        return np.argsort(-self.q, kind="stable")


class Catalog:
    """Immutable finite item universe shared by all flows."""

    def __init__(
        self,
        sizes,
        nu,
        flows: Sequence[FlowView],
        item_class=None,
        item_index=None,
        class_names: Sequence[str] | None = None,
        constants: dict | None = None,
        specs: Sequence[FlowSpec] | None = None,
        overlap: OverlapSpec | None = None,
    ):
        sizes = np.asarray(sizes, dtype=np.int64)
        nu = np.asarray(nu, dtype=float)
        if len(flows) != len(nu):
            raise ConfigError("one mixing probability per flow is required")
        if abs(math.fsum(nu) - 1) > SUM_TOL or np.any(nu <= 0):
            raise ConfigError(f"mixing probabilities {nu.tolist()} must be positive and sum to 1")
        if np.any(sizes < 1):
            raise ConfigError("item sizes must be >= 1")
        n = len(sizes)
        for f in flows:
            if f.items.min() < 0 or f.items.max() >= n:
                raise ConfigError("flow references an item outside the catalog")
            if len(np.unique(f.items)) != len(f.items):
                raise ConfigError("flow lists an item twice")
            if abs(math.fsum(f.q) - 1) > NORM_TOL:
                raise ConfigError(f"flow probabilities sum to {math.fsum(f.q)}, not 1")
        self.sizes = _frozen(sizes)
        self.nu = _frozen(nu)
        self.flows = tuple(flows)
        self.p = _frozen(mix_probabilities(n, nu, self.flows))
        if item_class is None:
            item_class = np.zeros(n, dtype=np.int16)
            class_names = ["0"]
        self.item_class = _frozen(np.asarray(item_class, dtype=np.int16))
        self.item_index = _frozen(
            np.arange(1, n + 1, dtype=np.int64) if item_index is None else np.asarray(item_index, dtype=np.int64)
        )
        self.class_names = tuple(class_names)
        self.constants = dict(constants or {})
        self.specs = tuple(specs) if specs else None
        self.overlap = overlap

    @classmethod
    def from_arrays(cls, sizes, nu, flow_items, flow_q) -> "Catalog":
        """Catalog over items ``0..n-1`` from raw per-flow arrays (tests, tiny instances)."""
        flows = [FlowView(np.asarray(i), np.asarray(q, dtype=float)) for i, q in zip(flow_items, flow_q)]
        return cls(sizes, nu, flows)

    # sizes and counts
    @property
    def n_items(self) -> int:
        return len(self.sizes)

    @property
    def n_flows(self) -> int:
        return len(self.flows)

    @cached_property
    def total_size(self) -> int:
        return int(self.sizes[self.p > 0].sum())

    @cached_property
    def mean_size(self) -> float:
        """Popularity-weighted mean item size."""
        return float(np.dot(self.p, self.sizes))

    def item_id(self, i: int) -> ItemId:
        return ItemId(self.class_names[self.item_class[i]], int(self.item_index[i]))

    def flow_p(self, k: int) -> np.ndarray:
        """Mixed probabilities of flow ``k``'s items, in the flow's order."""
        return self.p[self.flows[k].items]

    def order_by_p(self, k: int) -> np.ndarray:
        """Positions of flow ``k``'s items sorted by non-increasing mixed ``p``."""
        return np.argsort(-self.flow_p(k), kind="stable")

    def flow_only(self, k: int) -> "Catalog":
        """The catalog seen by flow ``k`` when served alone (``nu = 1``)."""
        f = self.flows[k]
        return Catalog(
            self.sizes,
            [1.0],
            [f],
            item_class=self.item_class,
            item_index=self.item_index,
            class_names=self.class_names,
            constants=self.constants,
        )

    def with_nu(self, nu) -> "Catalog":
        return Catalog(
            self.sizes,
            nu,
            self.flows,
            item_class=self.item_class,
            item_index=self.item_index,
            class_names=self.class_names,
            constants=self.constants,
            specs=self.specs,
            overlap=self.overlap,
        )

    def __repr__(self):
        return f"Catalog(items={self.n_items}, flows={self.n_flows}, nu={self.nu.tolist()})"


def mix_probabilities(n: int, nu, flows: Sequence[FlowView]) -> np.ndarray:
    """``p_i = sum_k nu_k q_i^(k)``, accumulated flow by flow in index order."""
    p = np.zeros(n)
    for k, f in enumerate(flows):
        p[f.items] += nu[k] * f.q
    return p


def build_catalog(specs: Sequence[FlowSpec], overlap: OverlapSpec | None = None, seed: int = 0) -> Catalog:
    """Materialize the union universe for a list of flows.

    Without ``overlap`` the flows' items are disjoint and flow ``k`` owns class
    ``str(k + 1)``.  With ``overlap`` exactly two flows are required and the
    items are the A/B/D classes of the overlap spec.
    """
    specs = list(specs)
    if not specs:
        raise ConfigError("at least one flow is required")
    nu = [s.nu for s in specs]
    if abs(math.fsum(nu) - 1) > SUM_TOL:
        raise ConfigError(f"flow mixing probabilities sum to {math.fsum(nu)}, not 1")
    if overlap is not None:
        return _build_overlap(specs, overlap, seed)

    sizes, flows, cls, index, consts = [], [], [], [], {}
    offset = 0
    for k, spec in enumerate(specs):
        if spec.popularity is None or spec.catalog_size < 1:
            raise ConfigError(f"flow {k + 1} needs a popularity family and catalog size")
        idx, q, c = family_masses(spec.popularity, spec.catalog_size)
        n = len(q)
        sizes.append(spec.size_rule.draw(n, make_rng(seed, STREAM_SIZES, k)))
        flows.append(FlowView(np.arange(offset, offset + n), q))
        cls.append(np.full(n, k, dtype=np.int16))
        index.append(idx)
        consts[str(k + 1)] = c
        offset += n
    return Catalog(
        np.concatenate(sizes),
        nu,
        flows,
        item_class=np.concatenate(cls),
        item_index=np.concatenate(index),
        class_names=[str(k + 1) for k in range(len(specs))],
        constants=consts,
        specs=specs,
    )


def _build_overlap(specs, ov: OverlapSpec, seed: int) -> Catalog:
    if len(specs) != 2:
        raise UnsupportedConfigurationError(
            f"overlapped items are supported for exactly two flows, got {len(specs)}"
        )
    for spec, expect in ((specs[0], {"A": ov.pA1, "D": ov.pD1}), (specs[1], {"B": ov.pB2, "D": ov.pD2})):
        if spec.class_weights is not None:
            for key, val in expect.items():
                if abs(spec.class_weights.get(key, 0.0) - val) > SUM_TOL:
                    raise ConfigError(f"flow class weights {spec.class_weights} disagree with overlap spec")
    masses, offsets, consts = {}, {}, {}
    offset = 0
    for j, name in enumerate("ABD"):
        idx, q, c = family_masses(ov.classes[name], int(ov.sizes[name]))
        masses[name] = (idx, q)
        offsets[name] = np.arange(offset, offset + len(q))
        consts[name] = c
        offset += len(q)
    n = offset
    sizes = np.ones(n, dtype=np.int64)
    parts1 = [(offsets["A"], ov.pA1 * masses["A"][1]), (offsets["D"], ov.pD1 * masses["D"][1])]
    parts2 = [(offsets["B"], ov.pB2 * masses["B"][1]), (offsets["D"], ov.pD2 * masses["D"][1])]
    flows = []
    for parts in (parts1, parts2):
        parts = [(i, q) for i, q in parts if np.any(q > 0)]
        flows.append(FlowView(np.concatenate([i for i, _ in parts]), np.concatenate([q for _, q in parts])))
    cls = np.concatenate([np.full(len(masses[c][1]), j, dtype=np.int16) for j, c in enumerate("ABD")])
    index = np.concatenate([masses[c][0] for c in "ABD"])
    return Catalog(
        sizes,
        [s.nu for s in specs],
        flows,
        item_class=cls,
        item_index=index,
        class_names=["A", "B", "D"],
        constants=consts,
        specs=specs,
        overlap=ov,
    )


# --------------------------------------------------------------------------
# queries and sampling


def tail_sum(catalog: Catalog, k: int, y: int) -> float:
    """``Q_y = sum_{i >= y} q_i`` over flow ``k`` in its family order (1-based ``y``)."""
    f = catalog.flows[k]
    if not 1 <= y <= len(f) + 1:
        raise BoundsError(f"tail index y={y} outside 1..{len(f) + 1}")
    return float(f.suffix[y - 1])


def sample_request(catalog: Catalog, nu_now, rng: np.random.Generator) -> tuple[int, ItemId]:
    """Draw one request: a flow from ``nu_now``, then an item from that flow."""
    nu_now = np.asarray(nu_now, dtype=float)
    if abs(math.fsum(nu_now) - 1) > SUM_TOL:
        raise ConfigError("nu vector must sum to 1")
    k = int(rng.choice(len(nu_now), p=nu_now))
    f = catalog.flows[k]
    pos = min(int(np.searchsorted(f.cdf, rng.random(), side="right")), len(f) - 1)
    return k, catalog.item_id(int(f.items[pos]))


class RequestStream:
    """Chunked IRM request generator with a private counter-based rng.

    Yields ``(flows, items)`` arrays; the mixing vector follows ``schedule``.
    """

    def __init__(self, catalog: Catalog, seed: int, schedule: RateSchedule | None = None, scenario: str = ""):
        self.catalog = catalog
        self.schedule = schedule or RateSchedule.constant(catalog.nu)
        for _, nu in self.schedule.segments:
            if len(nu) != catalog.n_flows:
                raise ConfigError("schedule nu vectors must have one entry per flow")
        self.rng = make_rng(seed, STREAM_REQUESTS, scenario=scenario)
        self.position = 0

    def next_chunk(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        cat = self.catalog
        flows = np.empty(n, dtype=np.int64)
        items = np.empty(n, dtype=np.int64)
        for off, length, nu in self.schedule.pieces(self.position, n):
            cum = np.cumsum(nu)
            fl = np.searchsorted(cum / cum[-1], self.rng.random(length), side="right")
            np.minimum(fl, len(nu) - 1, out=fl)
            flows[off : off + length] = fl
        u = self.rng.random(n)
        for k, f in enumerate(cat.flows):
            mask = flows == k
            pos = np.searchsorted(f.cdf, u[mask], side="right")
            np.minimum(pos, len(f) - 1, out=pos)
            items[mask] = f.items[pos]
        self.position += n
        return flows, items
