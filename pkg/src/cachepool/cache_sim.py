"""LRU simulation through the move-to-front search cost.

The MTF list is kept implicitly: every item remembers the time slot of its
last access and a Fenwick tree over time slots stores the size of the item
occupying each slot.  The search cost of a request (total size of strictly
more recent items) is then a suffix sum, so a request costs
``O(log slots)``.  When the slot counter runs out the live slots are
compacted in order, which keeps memory at twice the number of items.

Because a request misses at capacity ``x`` exactly when its cost exceeds
``x``, a single pass serves every capacity: each request is binned by the
number of capacities it misses.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numba
import numpy as np

from .errors import BudgetExceeded, ConfigError
from .workload import STREAM_INIT, Catalog, RateSchedule, RequestStream, make_rng, mix_probabilities

log = logging.getLogger(__name__)

CHUNK = 1 << 20
MIN_FLOW_REQUESTS = 100


# --------------------------------------------------------------------------
# kernels


@numba.njit(nogil=True, cache=True)
def _compact(tree, last, slot_item, sizes, state):
    L = tree.shape[0]
    n = 0
    for j in range(L):
        o = slot_item[j]
        if o >= 0:
            slot_item[n] = o
            last[o] = n
            n += 1
    for j in range(n, L):
        slot_item[j] = -1
    for j in range(L):
        tree[j] = 0
    for j in range(n):
        tree[j] = sizes[slot_item[j]]
    for j in range(L):
        k = j | (j + 1)
        if k < L:
            tree[k] += tree[j]
    state[0] = n


@numba.njit(nogil=True, cache=True)
def _access(it, tree, last, slot_item, sizes, state):
    """Move item ``it`` to the front; return its search cost (inf if unseen)."""
    L = tree.shape[0]
    if state[0] >= L:
        _compact(tree, last, slot_item, sizes, state)
    s = sizes[it]
    lt = last[it]
    if lt < 0:
        cost = np.inf
    else:
        acc = 0
        j = lt
        while j >= 0:
            acc += tree[j]
            j = (j & (j + 1)) - 1
        cost = float(state[1] - acc)
        j = lt
        while j < L:
            tree[j] -= s
            j |= j + 1
        slot_item[lt] = -1
        state[1] -= s
    t = state[0]
    j = t
    while j < L:
        tree[j] += s
        j |= j + 1
    slot_item[t] = it
    last[it] = t
    state[0] = t + 1
    state[1] += s
    return cost


@numba.njit(nogil=True, cache=True)
def _advance(items, flows, count_from, tree, last, slot_item, sizes, state, caps, hist, cost_out):
    """Process a chunk; requests at positions >= ``count_from`` are tallied.

    ``hist[k, j]`` counts flow-``k`` requests that miss exactly the ``j``
    smallest capacities.  An item larger than a capacity always misses there.
    """
    record = cost_out.shape[0] > 0
    for r in range(items.shape[0]):
        it = items[r]
        cost = _access(it, tree, last, slot_item, sizes, state)
        if record:
            cost_out[r] = cost
        if r >= count_from:
            key = max(cost, float(sizes[it]))
            hist[flows[r], np.searchsorted(caps, key)] += 1


@numba.njit(nogil=True, cache=True)
def _build_tree(tree, slot_item, sizes):
    L = tree.shape[0]
    for j in range(L):
        o = slot_item[j]
        tree[j] = sizes[o] if o >= 0 else 0
    for j in range(L):
        k = j | (j + 1)
        if k < L:
            tree[k] += tree[j]


# --------------------------------------------------------------------------
# state


class CacheState:
    """MTF list of previously requested items with size-weighted positions.

    Parameters
    ----------
    n_items : int
        Size of the item universe; items are ``0 .. n_items-1``.
    sizes : array, optional
        Item sizes.  When omitted, sizes are learned from the first request
        of each item in :func:`step`.
    """

    def __init__(self, n_items: int, sizes=None):
        self.n_items = int(n_items)
        slots = max(2 * self.n_items, 1024)
        self.tree = np.zeros(slots, dtype=np.int64)
        self.last = np.full(self.n_items, -1, dtype=np.int64)
        self.slot_item = np.full(slots, -1, dtype=np.int64)
        self.sizes = np.zeros(self.n_items, dtype=np.int64) if sizes is None else np.array(sizes, dtype=np.int64)
        self._state = np.zeros(2, dtype=np.int64)  # next slot, total live size

    @classmethod
    def stationary(cls, p, sizes, rng: np.random.Generator) -> "CacheState":
        """State drawn from the stationary MTF law for popularities ``p``.

        Under IRM the stationary MTF order is sampling without replacement
        proportional to ``p``, i.e. items sorted by independent ``Exp(p_i)``
        ages.  Items with ``p_i = 0`` are never requested and stay out.
        """
        p = np.asarray(p, dtype=float)
        st = cls(len(p), sizes)
        live = np.flatnonzero(p > 0)
        age = rng.standard_exponential(len(live)) / p[live]
        order = live[np.argsort(age, kind="stable")]  # most recent first
        n = len(order)
        st.slot_item[:n] = order[::-1]
        st.last[order[::-1]] = np.arange(n)
        _build_tree(st.tree, st.slot_item, st.sizes)
        st._state[:] = (n, int(st.sizes[order].sum()))
        return st

    def __len__(self):
        return int(np.count_nonzero(self.last >= 0))

    def order(self) -> np.ndarray:
        """Items most recently used first."""
        live = self.slot_item[: self._state[0]]
        return live[live >= 0][::-1].copy()

    def size_ahead(self, item: int) -> float:
        """Total size of items strictly more recent than ``item`` (inf if unseen)."""
        lt = self.last[item]
        if lt < 0:
            return math.inf
        live = self.slot_item[lt + 1 : self._state[0]]
        return float(self.sizes[live[live >= 0]].sum())

    def access(self, item: int) -> float:
        """Move ``item`` to the front and return its search cost before the move."""
        return float(_access(int(item), self.tree, self.last, self.slot_item, self.sizes, self._state))

    def advance(self, items, flows, count_from, caps, hist, costs=None):
        if costs is None:
            costs = np.empty(0)
        _advance(
            np.ascontiguousarray(items, dtype=np.int64),
            np.ascontiguousarray(flows, dtype=np.int64),
            int(count_from),
            self.tree,
            self.last,
            self.slot_item,
            self.sizes,
            self._state,
            caps,
            hist,
            costs,
        )


def step(state: CacheState, request: tuple, x: float) -> Literal["hit", "miss"]:
    """Serve one request ``(flow, item, size)`` on a cache of capacity ``x``.

    A request misses iff its item was never seen, or the total size of
    strictly more recent items exceeds ``x``, or the item itself is larger
    than ``x``.  The item moves to the front either way.
    """
    if x <= 0:
        raise ConfigError(f"capacity must be positive, got {x}")
    _, item, size = request
    item = int(item)
    if state.sizes[item] == 0:
        state.sizes[item] = int(size)
    elif state.sizes[item] != size:
        raise ConfigError(f"item {item} changed size from {state.sizes[item]} to {size}")
    cost = state.access(item)
    return "miss" if cost > x or size > x else "hit"


# --------------------------------------------------------------------------
# statistics


@dataclass
class MissStats:
    """Post-warmup hit/miss counters for every capacity and flow.

    ``misses[i, k]`` counts flow-``k`` misses at ``capacities[i]``;
    ``requests[k]`` is the number of counted flow-``k`` requests.
    """

    capacities: np.ndarray
    requests: np.ndarray
    misses: np.ndarray
    warmup: int = 0
    n_requests: int = 0
    warnings: list = field(default_factory=list)

    @classmethod
    def from_hist(cls, caps, hist, **kw):
        hist = np.asarray(hist)
        requests = hist.sum(axis=1)
        # misses at capacity i: requests missing more than i capacities
        tail = np.cumsum(hist[:, ::-1], axis=1)[:, ::-1]
        misses = tail[:, 1:].T.copy()
        return cls(np.asarray(caps, dtype=float), requests, misses, **kw)

    @property
    def overall_requests(self) -> int:
        return int(self.requests.sum())

    @property
    def overall_misses(self) -> np.ndarray:
        return self.misses.sum(axis=1)

    def miss_ratio(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.misses / self.requests[None, :]

    def overall_ratio(self) -> np.ndarray:
        return self.overall_misses / max(self.overall_requests, 1)

    def stderr(self) -> np.ndarray:
        p = self.miss_ratio()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1 - p) / self.requests[None, :])

    def overall_stderr(self) -> np.ndarray:
        p = self.overall_ratio()
        return np.sqrt(p * (1 - p) / max(self.overall_requests, 1))

    def merge(self, other: "MissStats") -> "MissStats":
        if not np.array_equal(self.capacities, other.capacities):
            raise ConfigError("cannot merge statistics over different capacities")
        return MissStats(
            self.capacities,
            self.requests + other.requests,
            self.misses + other.misses,
            self.warmup + other.warmup,
            self.n_requests + other.n_requests,
            self.warnings + [w for w in other.warnings if w not in self.warnings],
        )

    def rows(self):
        """``(x, flow, requests, misses, miss_ratio, stderr)``; flow ``"*"`` is overall."""
        ratio, se = self.miss_ratio(), self.stderr()
        oratio, ose = self.overall_ratio(), self.overall_stderr()
        for i, x in enumerate(self.capacities):
            for k in range(len(self.requests)):
                yield x, str(k + 1), int(self.requests[k]), int(self.misses[i, k]), ratio[i, k], se[i, k]
            yield x, "*", self.overall_requests, int(self.overall_misses[i]), oratio[i], ose[i]


# --------------------------------------------------------------------------
# runners


def default_warmup(catalog: Catalog, x_max: float, n_requests: int) -> int:
    rule = int(max(10 * x_max / catalog.mean_size, 1_000_000))
    if rule >= n_requests:
        clipped = n_requests // 2
        log.warning("default warmup %d >= %d requests; using %d", rule, n_requests, clipped)
        return clipped
    return rule


def _prepare_caps(x_list):
    caps = np.asarray(sorted(float(x) for x in x_list), dtype=float)
    if len(caps) == 0:
        raise ConfigError("at least one capacity is required")
    if caps[0] <= 0:
        raise ConfigError("capacities must be positive")
    return caps


def _initial_state(p, sizes, start, seed, stream, scenario):
    if start == "stationary":
        return CacheState.stationary(p, sizes, make_rng(seed, STREAM_INIT, stream, scenario=scenario))
    if start == "cold":
        return CacheState(len(p), sizes)
    raise ConfigError(f"unknown start mode {start!r}; use 'stationary' or 'cold'")


def _finish(stats: MissStats) -> MissStats:
    low = [k + 1 for k, n in enumerate(stats.requests) if n < MIN_FLOW_REQUESTS]
    if low:
        stats.warnings.append(f"low confidence: flows {low} have fewer than {MIN_FLOW_REQUESTS} counted requests")
    return stats


def run(
    catalog: Catalog,
    schedule: RateSchedule | None,
    x_list: Sequence[float],
    n_requests: int,
    warmup: int | None = None,
    seed: int = 0,
    *,
    start: str = "stationary",
    scenario: str = "",
    chunk: int = CHUNK,
    deadline: float | None = None,
) -> MissStats:
    """Simulate one pooled LRU cache over all capacities in a single MTF pass.

    ``start="stationary"`` draws the initial list from the stationary MTF law;
    ``start="cold"`` begins with an empty list so first requests miss.
    ``deadline`` is an absolute ``time.monotonic()`` value; passing it raises
    :class:`BudgetExceeded` carrying the partial statistics.
    """
    caps = _prepare_caps(x_list)
    n_requests = int(n_requests)
    if warmup is None:
        warmup = default_warmup(catalog, caps[-1], n_requests)
    if not 0 <= warmup < n_requests:
        raise ConfigError(f"warmup {warmup} must lie in [0, n_requests={n_requests})")
    p0 = catalog.p if schedule is None else mix_probabilities(catalog.n_items, schedule.segments[0][1], catalog.flows)
    state = _initial_state(p0, catalog.sizes, start, seed, 0, scenario)
    stream = RequestStream(catalog, seed, schedule, scenario=scenario)
    hist = np.zeros((catalog.n_flows, len(caps) + 1), dtype=np.int64)
    done = 0
    while done < n_requests:
        n = min(chunk, n_requests - done)
        flows, items = stream.next_chunk(n)
        state.advance(items, flows, max(warmup - done, 0), caps, hist)
        done += n
        if deadline is not None and time.monotonic() > deadline and done < n_requests:
            partial = MissStats.from_hist(caps, hist, warmup=warmup, n_requests=done)
            raise BudgetExceeded(f"stopped after {done} of {n_requests} requests", _finish(partial))
    return _finish(MissStats.from_hist(caps, hist, warmup=warmup, n_requests=n_requests))


def run_separated(
    catalog: Catalog,
    schedule: RateSchedule | None,
    fractions: Sequence[float],
    x_list: Sequence[float],
    n_requests: int,
    warmup: int | None = None,
    seed: int = 0,
    *,
    start: str = "stationary",
    scenario: str = "",
    chunk: int = CHUNK,
    deadline: float | None = None,
) -> MissStats:
    """Static separation: flow ``k`` gets a private LRU of size ``u_k * x``.

    ``fractions`` is either one split for every capacity or an array with one
    row per (ascending) capacity, e.g. a split optimized for each ``x``.

    The request stream is the same one :func:`run` draws for the same seed,
    so pooled and separated results share their randomness.  Capacities in
    the result are the total sizes ``x``.
    """
    caps = _prepare_caps(x_list)
    u = np.asarray(fractions, dtype=float)
    if u.ndim == 1:
        u = np.broadcast_to(u, (len(caps), len(u)))
    elif len(x_list) != len(caps) or np.any(np.diff(np.asarray(x_list, dtype=float)) <= 0):
        raise ConfigError("per-capacity fractions need strictly ascending capacities")
    if (
        u.shape != (len(caps), catalog.n_flows)
        or np.any(u < 0)
        or np.any(np.abs(u.sum(axis=1) - 1) > 1e-12)
    ):
        raise ConfigError("fractions must be one per flow (or one row per capacity), >= 0, summing to 1")
    return _run_private(catalog, schedule, u, caps, n_requests, warmup, seed, start, scenario, chunk, deadline)


def run_dedicated(
    catalog: Catalog,
    schedule: RateSchedule | None,
    x_list: Sequence[float],
    n_requests: int,
    warmup: int | None = None,
    seed: int = 0,
    *,
    start: str = "stationary",
    scenario: str = "",
    chunk: int = CHUNK,
    deadline: float | None = None,
) -> MissStats:
    """Every flow served alone by its own LRU of the full size ``x``."""
    caps = _prepare_caps(x_list)
    u = np.ones((len(caps), catalog.n_flows))
    return _run_private(catalog, schedule, u, caps, n_requests, warmup, seed, start, scenario, chunk, deadline)


def _run_private(catalog, schedule, u, caps, n_requests, warmup, seed, start, scenario, chunk, deadline):
    n_requests = int(n_requests)
    if warmup is None:
        warmup = default_warmup(catalog, caps[-1], n_requests)
    if not 0 <= warmup < n_requests:
        raise ConfigError(f"warmup {warmup} must lie in [0, n_requests={n_requests})")
    states, universes, flow_caps, slots, hists = [], [], [], [], []
    for k, f in enumerate(catalog.flows):
        # private universe of the flow's own items, kept in ascending global order
        own = np.sort(f.items)
        q = np.zeros(len(own))
        q[np.searchsorted(own, f.items)] = f.q
        states.append(_initial_state(q, catalog.sizes[own], start, seed, 1 + k, scenario))
        universes.append(own)
        # private capacities, deduplicated and sorted; a zero partition misses everything
        fk, where = np.unique(u[:, k] * caps, return_inverse=True)
        flow_caps.append(fk)
        slots.append(where.ravel())
        hists.append(np.zeros((1, len(fk) + 1), dtype=np.int64))
    stream = RequestStream(catalog, seed, schedule, scenario=scenario)
    done = 0
    while done < n_requests:
        n = min(chunk, n_requests - done)
        flows, items = stream.next_chunk(n)
        skip = max(warmup - done, 0)
        for k in range(catalog.n_flows):
            sel = np.flatnonzero(flows == k)
            if len(sel) == 0:
                continue
            count_from = int(np.searchsorted(sel, skip))
            local = np.searchsorted(universes[k], items[sel])
            states[k].advance(local, np.zeros(len(sel), dtype=np.int64), count_from, flow_caps[k], hists[k])
        done += n
        if deadline is not None and time.monotonic() > deadline and done < n_requests:
            raise BudgetExceeded(
                f"stopped after {done} of {n_requests} requests",
                _finish(_merge_separated(caps, flow_caps, slots, hists, warmup, done)),
            )
    return _finish(_merge_separated(caps, flow_caps, slots, hists, warmup, n_requests))


def _merge_separated(caps, flow_caps, slots, hists, warmup, n_requests):
    parts = [MissStats.from_hist(fc, h) for fc, h in zip(flow_caps, hists)]
    requests = np.array([p.requests[0] for p in parts])
    misses = np.stack([p.misses[slot, 0] for p, slot in zip(parts, slots)], axis=1)
    return MissStats(caps, requests, misses, warmup=warmup, n_requests=n_requests)
