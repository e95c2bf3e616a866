"""Slow, obviously-correct reference computations used as test oracles.

Nothing here imports the package's solvers; the helpers loop over every
allocation, bundle or matching directly.
"""

from __future__ import annotations

import itertools

import numpy as np


def allocations(n: int, m: int):
    """Every feasible allocation: each good goes to one buyer or to nobody."""
    for owners in itertools.product(range(-1, n), repeat=m):
        alloc = [0] * n
        for j, owner in enumerate(owners):
            if owner >= 0:
                alloc[owner] |= 1 << j
        yield tuple(alloc)


def best_welfare(values) -> float:
    values = np.asarray(values, dtype=float)
    n, size = values.shape
    m = size.bit_length() - 1
    return max(sum(values[i, s] for i, s in enumerate(a)) for a in allocations(n, m))


def best_matching(W) -> float:
    """Max-weight partial injection of buyers into goods."""
    W = np.asarray(W, dtype=float)
    n, m = W.shape
    best = 0.0
    for choice in itertools.product(range(-1, m), repeat=n):
        taken = [j for j in choice if j >= 0]
        if len(taken) != len(set(taken)):
            continue
        best = max(best, sum(W[i, j] for i, j in enumerate(choice) if j >= 0))
    return best


def unit_demand_value(row, mask: int) -> float:
    return max((row[j] for j in range(len(row)) if mask >> j & 1), default=0.0)


def linear_price(prices, mask: int) -> float:
    return sum(p for j, p in enumerate(prices) if mask >> j & 1)


def um_gap(values, price_of, alloc) -> list[float]:
    """Per-buyer best utility minus realized utility, by scanning every bundle.

    ``price_of(i, S)`` gives buyer ``i``'s price for ``S``.
    """
    values = np.asarray(values, dtype=float)
    n, size = values.shape
    gaps = []
    for i in range(n):
        best = max(values[i, s] - price_of(i, s) for s in range(size))
        gaps.append(best - (values[i, alloc[i]] - price_of(i, alloc[i])))
    return gaps


def best_revenue(n: int, m: int, price_of) -> float:
    return max(sum(price_of(i, s) for i, s in enumerate(a)) for a in allocations(n, m))


def random_values(rng, n: int, m: int, high: float = 10.0) -> np.ndarray:
    values = rng.uniform(0.0, high, size=(n, 1 << m))
    values[:, 0] = 0.0
    return values
