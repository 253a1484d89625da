"""Exact miss probabilities for tiny catalogs.

The LRU stack is the move-to-front list, so its stationary law is that of a
Markov chain on permutations of the requested items.  The chain is built and
solved directly, which keeps this module independent of the asymptotic
machinery it is used to test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import mpmath
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SizeError
from .workload import Catalog

MAX_ITEMS = 8
DENSE_MAX = 6  # 720 states; larger chains use an iterative sparse solve
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class TinyInstance:
    """At most eight items with sizes, per-flow conditional masses and a capacity.

    ``q`` has shape ``(flows, items)`` with each row summing to 1.
    """

    sizes: tuple
    nu: tuple
    q: tuple
    x: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != len(self.nu) or q.shape[1] != len(self.sizes):
            raise ConfigError("q must have one row per flow and one column per item")
        if len(self.sizes) > MAX_ITEMS:
            raise SizeError(f"exact computation supports at most {MAX_ITEMS} items, got {len(self.sizes)}")
        if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1) > 1e-12):
            raise ConfigError("each flow's masses must be non-negative and sum to 1")
        if abs(math.fsum(self.nu) - 1) > 1e-12 or min(self.nu) < 0:
            raise ConfigError("flow rates must be non-negative and sum to 1")
        if min(self.sizes) < 1:
            raise ConfigError("item sizes must be at least 1")
        object.__setattr__(self, "q", tuple(map(tuple, q)))
        object.__setattr__(self, "sizes", tuple(self.sizes))
        object.__setattr__(self, "nu", tuple(self.nu))

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.nu) @ np.asarray(self.q)

    @classmethod
    def from_catalog(cls, catalog: Catalog, x: float) -> "TinyInstance":
        q = np.zeros((catalog.n_flows, catalog.n_items))
        for k, f in enumerate(catalog.flows):
            q[k, f.items] = f.q
        return cls(tuple(int(s) for s in catalog.sizes), tuple(catalog.nu), q, x)


class ExactMiss(NamedTuple):
    per_flow: np.ndarray
    overall: float
    states: list  # permutations, most recent first
    pi: np.ndarray


def _stationary(states, p):
    index = {s: j for j, s in enumerate(states)}
    n = len(states)
    rows, cols, vals = [], [], []
    for j, s in enumerate(states):
        for pos, item in enumerate(s):
            if p[item] == 0:
                continue
            t = (item,) + s[:pos] + s[pos + 1 :]
            rows.append(j)
            cols.append(index[t])
            vals.append(p[item])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = (P.T - sp.identity(n, format="csr")).tocsc()
    if len(states[0]) <= DENSE_MAX:
        # balance equations with the last one replaced by sum(pi) = 1
        dense = A.toarray()
        dense[n - 1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(dense, b)
    else:
        # pin pi_0 = 1, solve the remaining balance equations, then normalize;
        # sparse LU fills in badly on this graph, a Krylov solve does not
        A = A.tocsr()
        B, b = A[1:, 1:], -A[1:, 0].toarray().ravel()
        rest = np.zeros(n - 1)
        for _ in range(3):  # refinement passes; breakdown near convergence is benign
            delta, _ = spla.bicgstab(B, b - B @ rest, rtol=1e-13, atol=0.0, maxiter=20000)
            rest += delta
        pi = np.concatenate([[1.0], rest])
        pi /= math.fsum(pi)
    resid = np.abs(P.T @ pi - pi).max()
    if resid > RESIDUAL_TOL or abs(pi.sum() - 1) > RESIDUAL_TOL:
        raise ArithmeticError(f"stationary solve residual {resid:.3g} exceeds {RESIDUAL_TOL}")
    return np.clip(pi, 0.0, None), P


def exact_miss(instance: TinyInstance, capacities: Sequence[float] | None = None) -> ExactMiss:
    """Stationary per-flow and overall miss probabilities of an LRU cache.

    A request for item ``i`` misses when the total size of items used more
    recently than ``i`` exceeds the capacity, or when ``s_i`` itself does.
    With ``capacities`` the result arrays gain a leading capacity axis.
    """
    p = instance.p
    live = [i for i in range(len(p)) if p[i] > 0]
    states = list(itertools.permutations(live))
    pi, _ = _stationary(states, p)
    sizes = np.asarray(instance.sizes, dtype=float)
    q = np.asarray(instance.q)
    caps = [instance.x] if capacities is None else list(capacities)
    # ahead[j, i]: size of items ahead of item i in state j
    ahead = np.zeros((len(states), len(p)))
    for j, s in enumerate(states):
        acc = 0.0
        for item in s:
            ahead[j, item] = acc
            acc += sizes[item]
    out = []
    for x in caps:
        miss_item = pi @ (np.maximum(ahead, sizes) > x)
        out.append(q @ miss_item)
    per_flow = np.array(out)
    overall = per_flow @ np.asarray(instance.nu)
    if capacities is None:
        return ExactMiss(per_flow[0], float(overall[0]), states, pi)
    return ExactMiss(per_flow, overall, states, pi)


def product_form(states, p) -> np.ndarray:
    """Known closed form of the move-to-front stationary law, for cross-checks."""
    out = np.empty(len(states))
    for j, s in enumerate(states):
        prob, used = 1.0, 0.0
        for item in s:
            prob *= p[item] / (1.0 - used)
            used += p[item]
        out[j] = prob
    return out


def exact_sigma_distribution(instance: TinyInstance, n_max: int, dps: int = 50) -> np.ndarray:
    """``P[sigma > n | flow k]`` for ``n = 0..n_max`` at high working precision.

    Returns an array of shape ``(flows, n_max + 1)``.
    """
    if n_max < 0:
        raise ConfigError("n_max must be non-negative")
    with mpmath.workdps(dps):
        nu = [mpmath.mpf(v) for v in instance.nu]
        q = [[mpmath.mpf(v) for v in row] for row in instance.q]
        p = [mpmath.fsum(nu[k] * q[k][i] for k in range(len(nu))) for i in range(len(instance.sizes))]
        table = np.empty((len(nu), n_max + 1))
        for k, row in enumerate(q):
            for n in range(n_max + 1):
                table[k, n] = float(mpmath.fsum(qi * (1 - pi) ** n for qi, pi in zip(row, p) if qi))
    return table
