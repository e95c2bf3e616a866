"""Linear competitive-equilibrium prices for a fixed allocation.

Prices come from a linear program over per-good prices ``p`` and one slack
``alpha[i, S]`` per utility-maximization row::

    v_i(S) - p(S) - alpha[i, S] <= v_i(S_i) - p(S_i)     for every buyer i, bundle S
    p_j = 0                                              for every unallocated good j
    p >= 0, alpha >= 0

The min-slack solve minimizes ``sum(alpha)``. The revenue solves then cap
``sum(alpha)`` at that minimum and minimize or maximize ``sum(p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from celearn.errors import DimensionMismatch, LPNumericalFailure, NotWelfareMaximizing
from celearn.market import TOL, _check_allocation, goods_of, is_feasible
from celearn.valuations import UnitDemandMatrix
from celearn.welfare import MAX_EXACT_GOODS, max_welfare_exact, max_welfare_unit_demand

SLACK_TOL = 1e-9
RESIDUAL_TOL = 1e-7


class Objective(str, Enum):
    MIN_SLACK = "min-slack"
    MIN_REVENUE = "min-rev"
    MAX_REVENUE = "max-rev"


@dataclass(frozen=True, eq=False)
class PriceSolution:
    prices: np.ndarray
    total_slack: float
    per_pair_slack: dict
    objective_used: Objective

    @property
    def revenue(self) -> float:
        return float(self.prices.sum())


@dataclass
class PriceReport:
    max_residual: float
    violations: list = field(default_factory=list)
    zero_price_ok: bool = True

    @property
    def ok(self) -> bool:
        return self.max_residual <= RESIDUAL_TOL and self.zero_price_ok


def _rows(market, alloc):
    """UM constraint rows: (pairs, good-membership matrix of S, rhs)."""
    if isinstance(market, UnitDemandMatrix):
        W = market.matrix
        n, m = W.shape
        # for unit-demand buyers and non-negative prices only the empty bundle
        # and singletons can be a best response
        bundles = np.array([0] + [1 << j for j in range(m)], dtype=np.int64)
        held = np.array([market.value(i, s) for i, s in enumerate(alloc)])
        vals = np.hstack([np.zeros((n, 1)), W])
    else:
        n, m = market.num_buyers, market.num_goods
        bundles = np.arange(1 << m, dtype=np.int64)
        held = market.values[np.arange(n), np.array(alloc, dtype=np.int64)]
        vals = market.values
    member = ((bundles[:, None] >> np.arange(m)[None, :]) & 1).astype(float)
    pairs = [(i, int(s)) for i in range(n) for s in bundles]
    rhs = (held[:, None] - vals).reshape(-1)
    return pairs, member, rhs


def _check_alloc(market, alloc) -> tuple:
    if isinstance(market, UnitDemandMatrix):
        alloc = tuple(int(s) for s in alloc)
        if len(alloc) != market.num_buyers:
            raise DimensionMismatch("allocation length differs from number of buyers")
        if not is_feasible(alloc) or any(s >> market.num_goods for s in alloc):
            raise DimensionMismatch(f"allocation {alloc} is not a feasible allocation of the goods")
        return alloc
    return _check_allocation(market, alloc)


def _assert_welfare_maximizing(market, alloc) -> None:
    if isinstance(market, UnitDemandMatrix):
        best = max_welfare_unit_demand(market).value
        achieved = sum(market.value(i, s) for i, s in enumerate(alloc))
    else:
        if market.num_goods > MAX_EXACT_GOODS:
            return
        best = max_welfare_exact(market).value
        achieved = float(sum(market.values[i, s] for i, s in enumerate(alloc)))
    if achieved < best - 1e-7:
        raise NotWelfareMaximizing(f"allocation welfare {achieved} is below the optimum {best}")


def _solve(c, A_ub, b_ub, bounds):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise LPNumericalFailure(f"linear program failed: {res.message}")
    return res


def linear_ce_prices(market, alloc, objective=Objective.MIN_SLACK, check: bool = True) -> PriceSolution:
    """Linear prices supporting ``alloc`` with the least total UM slack.

    ``market`` is a ``Market`` or a ``UnitDemandMatrix``; the latter uses
    only empty and singleton deviation rows, which describe the same
    feasible price set.
    """
    objective = Objective(objective)
    alloc = _check_alloc(market, alloc)
    if check:
        _assert_welfare_maximizing(market, alloc)
    n, m = market.num_buyers, market.num_goods
    pairs, member, rhs = _rows(market, alloc)
    # row (i, S): sum_{j in S_i} p_j - sum_{j in S} p_j - alpha <= v_i(S_i) - v_i(S)
    price_block = _price_block(n, m, alloc, member)
    num_rows = len(pairs)
    A = sparse.hstack([sparse.csr_matrix(price_block), -sparse.identity(num_rows, format="csr")], format="csr")
    used = 0
    for s in alloc:
        used |= s
    bounds = [(0.0, None) if used >> j & 1 else (0.0, 0.0) for j in range(m)] + [(0.0, None)] * num_rows

    c = np.concatenate([np.zeros(m), np.ones(num_rows)])
    res = _solve(c, A, rhs, bounds)
    min_slack = max(float(res.fun), 0.0)
    x = res.x
    if objective is not Objective.MIN_SLACK:
        sign = 1.0 if objective is Objective.MIN_REVENUE else -1.0
        c2 = np.concatenate([sign * np.ones(m), np.zeros(num_rows)])
        if min_slack <= SLACK_TOL:
            # an exact CE exists: pin every slack at zero instead of granting a budget
            x = _solve(c2, A, rhs, bounds[:m] + [(0.0, 0.0)] * num_rows).x
        else:
            cap = sparse.csr_matrix(np.concatenate([np.zeros(m), np.ones(num_rows)])[None, :])
            A2 = sparse.vstack([A, cap], format="csr")
            b2 = np.concatenate([rhs, [min_slack + SLACK_TOL]])
            x = _solve(c2, A2, b2, bounds).x

    prices = np.clip(x[:m], 0.0, None)
    prices[[j for j in range(m) if not used >> j & 1]] = 0.0
    # report the slack the returned prices actually need
    alphas = np.maximum(price_block @ prices - rhs, 0.0)
    per_pair = {pairs[r]: float(a) for r, a in enumerate(alphas) if a > SLACK_TOL}
    total = float(sum(per_pair.values()))
    return PriceSolution(prices, total, per_pair, objective)


def _price_block(n: int, m: int, alloc, member: np.ndarray) -> np.ndarray:
    held_goods = np.zeros((n, m))
    for i, s in enumerate(alloc):
        for j in goods_of(s):
            held_goods[i, j] = 1.0
    return (held_goods[:, None, :] - member[None, :, :]).reshape(-1, m)


def verify_price_solution(market, alloc, sol: PriceSolution) -> PriceReport:
    """Recompute every UM row and the zero-price rule for ``sol``."""
    alloc = _check_alloc(market, alloc)
    prices = np.asarray(sol.prices, dtype=float)
    pairs, member, rhs = _rows(market, alloc)
    block = _price_block(market.num_buyers, market.num_goods, alloc, member)
    slack = np.array([sol.per_pair_slack.get(pair, 0.0) for pair in pairs])
    residual = block @ prices - rhs - slack
    max_residual = float(max(residual.max(), 0.0))
    violations = [(*pairs[r], float(residual[r])) for r in np.flatnonzero(residual > RESIDUAL_TOL)]
    used = 0
    for s in alloc:
        used |= s
    zero_ok = all(prices[j] <= TOL for j in range(len(prices)) if not used >> j & 1)
    return PriceReport(max_residual, violations, zero_ok)
