"""Winner determination, submarkets and welfare upper bounds.

Every solver takes an optional boolean ``allowed`` array shaped like the
value table. Disallowed (buyer, bundle) pairs are never assigned; the empty
bundle is always allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from celearn.errors import TooManyGoods
from celearn.market import TOL, Market, full_bundle, subset_max, subset_sums
from celearn.valuations import UnitDemandMatrix

MAX_EXACT_GOODS = 14


@dataclass(frozen=True)
class WelfareResult:
    allocation: tuple
    value: float


@dataclass(frozen=True)
class Submarket:
    """Market left after removing ``buyer`` and the goods of ``removed``.

    ``buyer_map[k]`` is the parent index of surviving buyer ``k``;
    ``good_map[j]`` is the parent index of surviving good ``j``.
    """

    market: Market
    buyer: int
    removed: int
    buyer_map: tuple
    good_map: tuple

    def parent_bundle(self, mask: int) -> int:
        out = 0
        for j, parent in enumerate(self.good_map):
            if mask >> j & 1:
                out |= 1 << parent
        return out

    def parent_allocation(self, alloc) -> tuple:
        """Lift a submarket allocation to the parent (removed buyer gets ``removed``)."""
        out = [0] * (len(self.buyer_map) + 1)
        out[self.buyer] = self.removed
        for k, s in enumerate(alloc):
            out[self.buyer_map[k]] = self.parent_bundle(s)
        return tuple(out)


def _masked_values(values: np.ndarray, allowed) -> np.ndarray:
    vals = np.array(values, dtype=float, copy=True)
    if allowed is not None:
        vals[~np.asarray(allowed, dtype=bool)] = -np.inf
        vals[:, 0] = 0.0
    return vals


def _strict_submask_max(best: np.ndarray) -> np.ndarray:
    """``out[..., S] = max over proper subsets T of S of best[..., T]``."""
    out = np.full_like(best, -np.inf)
    num_goods = best.shape[-1].bit_length() - 1
    lead = best.shape[:-1]
    for j in range(num_goods):
        step = 1 << j
        src = best.reshape(*lead, -1, 2 * step)
        dst = out.reshape(*lead, -1, 2 * step)
        np.maximum(dst[..., step:], src[..., :step], out=dst[..., step:])
    return out


def max_welfare_exact(market: Market, allowed=None) -> WelfareResult:
    """Optimal set packing of bundles to buyers by branch and bound.

    Buyers are branched in index order. Only bundles worth strictly more
    than every proper sub-bundle are branched on; any other bundle can be
    swapped for a smaller one without losing welfare. A node is cut when the
    feasibility-relaxed bound (each remaining buyer takes its best bundle of
    the free goods) cannot reach the incumbent. Among co-optimal
    allocations the lexicographically smallest is returned.
    """
    n, m = market.num_buyers, market.num_goods
    if m > MAX_EXACT_GOODS:
        raise TooManyGoods(f"exact welfare is capped at {MAX_EXACT_GOODS} goods")
    if n == 0:
        return WelfareResult((), 0.0)
    vals = _masked_values(market.values, allowed)
    best = subset_max(vals)
    strict = _strict_submask_max(best)
    candidates = []
    for k in range(n):
        masks = np.flatnonzero(vals[k] > strict[k])
        masks = masks[masks != 0]
        order = np.lexsort((masks, -vals[k, masks]))
        candidates.append([(int(s), float(vals[k, s])) for s in masks[order]])

    incumbent = [0.0, (0,) * n]
    alloc = [0] * n
    full = full_bundle(m)

    def better(value, current):
        if value > incumbent[0] + TOL:
            return True
        return abs(value - incumbent[0]) <= TOL and current < incumbent[1]

    def search(k, used, acc):
        if k == n:
            current = tuple(alloc)
            if better(acc, current):
                incumbent[0], incumbent[1] = acc, current
            return
        free = full & ~used
        bound = acc + sum(best[q, free] for q in range(k, n))
        if bound < incumbent[0] - TOL:
            return
        for s, v in candidates[k]:
            if s & used:
                continue
            alloc[k] = s
            search(k + 1, used | s, acc + v)
        alloc[k] = 0
        search(k + 1, used, acc)

    search(0, 0, 0.0)
    allocation = incumbent[1]
    value = float(sum(market.values[i, s] for i, s in enumerate(allocation)))
    return WelfareResult(allocation, value)


def max_welfare_enumerate(market: Market, allowed=None) -> WelfareResult:
    """Reference solver: scans every assignment of goods to buyers or nobody."""
    n, m = market.num_buyers, market.num_goods
    vals = _masked_values(market.values, allowed)
    best_value, best_alloc = 0.0, (0,) * n
    if n == 0:
        return WelfareResult((), 0.0)
    for code in range((n + 1) ** m):
        alloc = [0] * n
        for j in range(m):
            code, owner = divmod(code, n + 1)
            if owner:
                alloc[owner - 1] |= 1 << j
        value = sum(vals[i, s] for i, s in enumerate(alloc))
        alloc = tuple(alloc)
        if value > best_value + TOL or (abs(value - best_value) <= TOL and alloc < best_alloc):
            best_value, best_alloc = value, alloc
    return WelfareResult(best_alloc, float(sum(market.values[i, s] for i, s in enumerate(best_alloc))))


def _assignment(weights: np.ndarray, allowed) -> tuple[np.ndarray, float]:
    """Max-weight matching of rows to columns, each row may stay unmatched.

    Returns ``col[i]`` (``-1`` when unmatched) and the matched weight.
    """
    n, m = weights.shape
    if n == 0 or m == 0:
        return np.full(n, -1), 0.0
    w = np.array(weights, dtype=float, copy=True)
    usable = w > 0
    if allowed is not None:
        usable &= np.asarray(allowed, dtype=bool)
    forbid = -(1.0 + np.abs(w).sum()) * 2
    w[~usable] = forbid
    padded = np.hstack([w, np.zeros((n, n))])
    rows, cols = linear_sum_assignment(padded, maximize=True)
    col = np.full(n, -1)
    total = 0.0
    for r, c in zip(rows, cols):
        if c < m and usable[r, c]:
            col[r] = c
            total += weights[r, c]
    return col, float(total)


def max_welfare_unit_demand(V: UnitDemandMatrix | np.ndarray, allowed=None) -> WelfareResult:
    """Hungarian-algorithm welfare for unit-demand buyers (``allowed`` is ``n x m``)."""
    W = V.matrix if isinstance(V, UnitDemandMatrix) else np.asarray(V, dtype=float)
    col, total = _assignment(W, allowed)
    allocation = tuple(0 if c < 0 else 1 << int(c) for c in col)
    return WelfareResult(allocation, total)


def make_submarket(market: Market, buyer: int, removed: int) -> Submarket:
    n, m = market.num_buyers, market.num_goods
    if not 0 <= buyer < n or removed >> m:
        raise IndexError(f"pair ({buyer}, {removed}) outside the market")
    good_map = tuple(j for j in range(m) if not removed >> j & 1)
    buyer_map = tuple(k for k in range(n) if k != buyer)
    parent_masks = subset_sums([1 << j for j in good_map]).astype(np.int64)
    values = market.values[np.ix_(buyer_map, parent_masks)] if buyer_map else np.zeros((0, len(parent_masks)))
    sub = Market(values, allow_negative=market.allow_negative)
    return Submarket(sub, buyer, removed, buyer_map, good_map)


def submarket_allowed(allowed, sub: Submarket) -> np.ndarray | None:
    if allowed is None:
        return None
    parent_masks = subset_sums([1 << j for j in sub.good_map]).astype(np.int64)
    return np.asarray(allowed, dtype=bool)[np.ix_(sub.buyer_map, parent_masks)]


def submarket_welfare(market: Market, buyer: int, removed: int, allowed=None) -> float:
    sub = make_submarket(market, buyer, removed)
    return max_welfare_exact(sub.market, submarket_allowed(allowed, sub)).value


def relaxed_bounds(market: Market, allowed=None) -> np.ndarray:
    """``relaxed_upper_bound`` for every (buyer, bundle) pair at once."""
    vals = _masked_values(market.values, allowed)
    best = subset_max(vals)
    m = market.num_goods
    complement = full_bundle(m) ^ np.arange(1 << m)
    outside = best[:, complement]
    return outside.sum(axis=0, keepdims=True) - outside


def relaxed_upper_bound(market: Market, buyer: int, removed: int, allowed=None) -> float:
    """Sum over other buyers of their best bundle avoiding ``removed``.

    Dropping the disjointness constraint among those buyers makes this an
    upper bound on the welfare of the ``(buyer, removed)`` submarket.
    """
    vals = _masked_values(market.values, allowed)
    free = full_bundle(market.num_goods) & ~removed
    total = 0.0
    for k in range(market.num_buyers):
        if k == buyer:
            continue
        total += max(float(np.max(vals[k, _submasks(free)])), 0.0)
    return total


def _submasks(free: int) -> list[int]:
    out = []
    sub = free
    while True:
        out.append(sub)
        if sub == 0:
            return out
        sub = (sub - 1) & free


def unit_demand_submarket_welfare(W: np.ndarray, buyer: int, good: int, allowed=None) -> float:
    """Optimal matching welfare with ``buyer`` and ``good`` removed."""
    rows = [k for k in range(W.shape[0]) if k != buyer]
    cols = [j for j in range(W.shape[1]) if j != good]
    sub_allowed = None if allowed is None else np.asarray(allowed, dtype=bool)[np.ix_(rows, cols)]
    return _assignment(W[np.ix_(rows, cols)], sub_allowed)[1]


def unit_demand_relaxed_bounds(W: np.ndarray, allowed=None) -> np.ndarray:
    """Per (buyer, good): sum over other buyers of their best other good."""
    w = np.array(W, dtype=float, copy=True)
    if allowed is not None:
        w[~np.asarray(allowed, dtype=bool)] = -np.inf
    n, m = w.shape
    out = np.empty((n, m))
    for j in range(m):
        others = np.delete(w, j, axis=1)
        best = np.maximum(others.max(axis=1), 0.0) if others.shape[1] else np.zeros(n)
        out[:, j] = best.sum() - best
    return out
