"""Certain-market data model: markets, allocations, pricings and CE checks.

Goods are indexed ``0..m-1`` and a bundle is an ``int`` bitmask with good
``j`` at bit ``j``. Buyers are indexed ``0..n-1``. Valuations are stored
densely, one row of ``2**m`` values per buyer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from celearn.errors import (
    DimensionMismatch,
    EmptyIndexSet,
    EnumerationTooLarge,
    IncompatibleMarkets,
    InfeasibleAllocation,
    InvalidMarket,
    TooManyGoods,
)

TOL = 1e-9
MAX_DENSE_GOODS = 20
MAX_RM_ENUMERATION_GOODS = 12

Allocation = tuple
IndexSet = Sequence[tuple]


def bundle(*goods: int) -> int:
    """Bitmask for the given 0-based goods."""
    mask = 0
    for j in goods:
        if j < 0:
            raise ValueError(f"negative good index {j}")
        mask |= 1 << j
    return mask


def goods_of(mask: int) -> list[int]:
    return [j for j in range(mask.bit_length()) if mask >> j & 1]


def full_bundle(num_goods: int) -> int:
    return (1 << num_goods) - 1


@lru_cache(maxsize=None)
def popcounts(num_goods: int) -> np.ndarray:
    masks = np.arange(1 << num_goods)
    counts = np.zeros(1 << num_goods, dtype=np.int64)
    for j in range(num_goods):
        counts += (masks >> j) & 1
    counts.setflags(write=False)
    return counts


def subset_sums(weights) -> np.ndarray:
    """Array ``out[mask] = sum(weights[j] for j in mask)`` over all masks."""
    weights = np.asarray(weights, dtype=float)
    out = np.zeros(1 << len(weights))
    for j, w in enumerate(weights):
        step = 1 << j
        out.reshape(-1, 2 * step)[:, step:] += w
    return out


def subset_max(values: np.ndarray) -> np.ndarray:
    """Zeta transform under max: ``out[..., mask] = max over T subset of mask``.

    Works row-wise on the last axis, whose length must be a power of two.
    """
    out = np.array(values, dtype=float, copy=True)
    size = out.shape[-1]
    num_goods = size.bit_length() - 1
    lead = out.shape[:-1]
    for j in range(num_goods):
        step = 1 << j
        view = out.reshape(*lead, -1, 2 * step)
        np.maximum(view[..., step:], view[..., :step], out=view[..., step:])
    return out


@dataclass(frozen=True, eq=False)
class Market:
    """A combinatorial market with dense valuations ``values[i, mask]``.

    ``allow_negative`` is only meant for empirical markets built from noisy
    means, which can dip below zero.
    """

    values: np.ndarray
    allow_negative: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise InvalidMarket("values must be a 2-d array")
        size = values.shape[1]
        if size < 1 or size & (size - 1):
            raise InvalidMarket("bundle axis length must be a power of two")
        if size.bit_length() - 1 > MAX_DENSE_GOODS:
            raise TooManyGoods(f"dense markets are capped at {MAX_DENSE_GOODS} goods")
        if not np.all(np.isfinite(values)):
            raise InvalidMarket("values must be finite")
        if np.any(values[:, 0] != 0):
            raise InvalidMarket("value of the empty bundle must be 0")
        if not self.allow_negative and np.any(values < 0):
            raise InvalidMarket("values must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, num_buyers: int, num_goods: int, fn) -> "Market":
        """Build a market from ``fn(buyer, mask) -> value`` (empty bundle forced to 0)."""
        values = np.zeros((num_buyers, 1 << num_goods))
        for i in range(num_buyers):
            for mask in range(1, 1 << num_goods):
                values[i, mask] = fn(i, mask)
        return cls(values)

    @property
    def num_buyers(self) -> int:
        return self.values.shape[0]

    @property
    def num_goods(self) -> int:
        return self.values.shape[1].bit_length() - 1

    def value(self, buyer: int, mask: int) -> float:
        return float(self.values[buyer, mask])

    def compatible(self, other: "Market") -> bool:
        return self.values.shape == other.values.shape

    def full_index(self) -> list[tuple[int, int]]:
        """All non-empty (buyer, bundle) pairs."""
        return [(i, s) for i in range(self.num_buyers) for s in range(1, 1 << self.num_goods)]

    def __eq__(self, other):
        if not isinstance(other, Market):
            return NotImplemented
        return self.compatible(other) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Market(num_buyers={self.num_buyers}, num_goods={self.num_goods})"


@dataclass(frozen=True, eq=False)
class LinearPricing:
    """Anonymous per-good prices; a bundle costs the sum of its goods."""

    prices: np.ndarray

    def __post_init__(self):
        prices = np.array(self.prices, dtype=float, copy=True).reshape(-1)
        if np.any(prices < 0) or not np.all(np.isfinite(prices)):
            raise ValueError("prices must be finite and non-negative")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    def bundle_prices(self) -> np.ndarray:
        return subset_sums(self.prices)

    def table(self, num_buyers: int) -> np.ndarray:
        return np.broadcast_to(self.bundle_prices(), (num_buyers, 1 << len(self.prices)))

    def price(self, buyer: int, mask: int) -> float:
        return float(sum(self.prices[j] for j in goods_of(mask)))


@dataclass(frozen=True, eq=False)
class BundlePricing:
    """Per-buyer bundle prices ``table[i, mask]``."""

    table_: np.ndarray

    def __post_init__(self):
        table = np.array(self.table_, dtype=float, copy=True)
        if table.ndim != 2:
            raise ValueError("bundle price table must be 2-d")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ValueError("prices must be finite and non-negative")
        table.setflags(write=False)
        object.__setattr__(self, "table_", table)

    def table(self, num_buyers: int) -> np.ndarray:
        if self.table_.shape[0] != num_buyers:
            raise DimensionMismatch("price table has the wrong number of buyers")
        return self.table_

    def price(self, buyer: int, mask: int) -> float:
        return float(self.table_[buyer, mask])


Pricing = Union[LinearPricing, BundlePricing]


@dataclass(frozen=True)
class Outcome:
    allocation: tuple
    pricing: Pricing

    def __post_init__(self):
        alloc = tuple(int(s) for s in self.allocation)
        if not is_feasible(alloc):
            raise InfeasibleAllocation(f"allocation {alloc} has overlapping bundles")
        object.__setattr__(self, "allocation", alloc)


def is_feasible(alloc: Iterable[int]) -> bool:
    used = 0
    for s in alloc:
        if s < 0 or used & s:
            return False
        used |= s
    return True


def _check_allocation(market: Market, alloc) -> tuple:
    alloc = tuple(int(s) for s in alloc)
    if len(alloc) != market.num_buyers:
        raise DimensionMismatch(f"allocation has {len(alloc)} entries, market has {market.num_buyers} buyers")
    if any(s >> market.num_goods for s in alloc):
        raise DimensionMismatch("allocation references goods outside the market")
    if not is_feasible(alloc):
        raise InfeasibleAllocation(f"allocation {alloc} has overlapping bundles")
    return alloc


def welfare(market: Market, alloc) -> float:
    alloc = _check_allocation(market, alloc)
    return float(sum(market.values[i, s] for i, s in enumerate(alloc)))


def market_distance(a: Market, b: Market, idx: IndexSet | None = None) -> float:
    """Max absolute value gap over ``idx`` (all pairs when ``idx`` is None)."""
    if not a.compatible(b):
        raise IncompatibleMarkets(f"{a!r} vs {b!r}")
    if idx is None:
        if a.values.size == 0:
            raise EmptyIndexSet("market has no buyers")
        return float(np.max(np.abs(a.values - b.values)))
    idx = list(idx)
    if not idx:
        raise EmptyIndexSet("index set is empty")
    buyers = np.fromiter((i for i, _ in idx), dtype=np.int64, count=len(idx))
    masks = np.fromiter((s for _, s in idx), dtype=np.int64, count=len(idx))
    return float(np.max(np.abs(a.values[buyers, masks] - b.values[buyers, masks])))


def _price_table(market: Market, pricing: Pricing) -> np.ndarray:
    if isinstance(pricing, LinearPricing) and len(pricing.prices) != market.num_goods:
        raise DimensionMismatch("price vector length differs from number of goods")
    table = pricing.table(market.num_buyers)
    if table.shape != market.values.shape:
        raise DimensionMismatch("price table shape differs from market")
    return table


def um_slack_per_buyer(market: Market, outcome: Outcome) -> np.ndarray:
    """Best attainable utility minus realized utility, per buyer (never negative)."""
    alloc = _check_allocation(market, outcome.allocation)
    utility = market.values - _price_table(market, outcome.pricing)
    rows = np.arange(market.num_buyers)
    realized = utility[rows, np.array(alloc, dtype=np.int64)]
    return np.maximum(utility.max(axis=1) - realized, 0.0)


def um_violation(market: Market, outcome: Outcome) -> float:
    return float(um_slack_per_buyer(market, outcome).max())


@lru_cache(maxsize=16)
def _submask_lists(num_goods: int) -> tuple:
    out = []
    for free in range(1 << num_goods):
        subs = []
        sub = free
        while True:
            subs.append(sub)
            if sub == 0:
                break
            sub = (sub - 1) & free
        out.append(np.array(subs, dtype=np.int64))
    return tuple(out)


def max_revenue(market: Market, pricing: Pricing) -> float:
    """Exhaustive max of seller revenue over every feasible allocation.

    Dynamic program over buyers and remaining goods; visits all ``O(3^m)``
    (free set, bundle) combinations per buyer, so it is capped at
    ``MAX_RM_ENUMERATION_GOODS``.
    """
    m = market.num_goods
    if m > MAX_RM_ENUMERATION_GOODS:
        raise EnumerationTooLarge(f"revenue enumeration is capped at {MAX_RM_ENUMERATION_GOODS} goods")
    table = _price_table(market, pricing)
    subs = _submask_lists(m)
    best = np.zeros(1 << m)
    for i in reversed(range(market.num_buyers)):
        row = table[i]
        nxt = np.empty_like(best)
        for free in range(1 << m):
            s = subs[free]
            nxt[free] = np.max(row[s] + best[free ^ s])
        best = nxt
    return float(best[-1])


def rm_holds(market: Market, outcome: Outcome, method: str = "auto") -> bool:
    """Seller revenue maximization.

    ``method`` is ``"linear"`` (zero price on every unallocated good),
    ``"enumerate"`` (exhaustive search over feasible allocations) or
    ``"auto"`` (linear when the pricing is linear).
    """
    alloc = _check_allocation(market, outcome.allocation)
    pricing = outcome.pricing
    if method == "auto":
        method = "linear" if isinstance(pricing, LinearPricing) else "enumerate"
    if method == "linear":
        if not isinstance(pricing, LinearPricing):
            raise ValueError("linear RM check needs linear prices")
        used = 0
        for s in alloc:
            used |= s
        return all(p <= TOL for j, p in enumerate(pricing.prices) if not used >> j & 1)
    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    table = _price_table(market, pricing)
    revenue = sum(table[i, s] for i, s in enumerate(alloc))
    return revenue + TOL >= max_revenue(market, pricing)


def is_approx_ce(market: Market, outcome: Outcome, eps: float = 0.0, rm_method: str = "auto") -> bool:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    return um_violation(market, outcome) <= eps + TOL and rm_holds(market, outcome, rm_method)
