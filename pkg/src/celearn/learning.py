"""Learning markets from noisy value queries: EA, EAP and their bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from celearn.errors import DomainError, EmptyIndexSet, InvalidSchedule
from celearn.market import Market
from celearn.valuations import NoisyOracle, UnitDemandMatrix
from celearn.welfare import (
    make_submarket,
    max_welfare_exact,
    max_welfare_unit_demand,
    relaxed_bounds,
    submarket_allowed,
    unit_demand_relaxed_bounds,
    unit_demand_submarket_welfare,
)

UNBOUNDED = math.inf


class Status(str, Enum):
    ACTIVE = "active"
    PRUNED = "pruned"


class BoundMode(str, Enum):
    EXACT = "exact"
    RELAXED = "relaxed"
    TWO_PASS = "two-pass"


def hoeffding_eps(c: float, idx_size: int, delta: float, t: int) -> float:
    """Radius ``c * sqrt(ln(2|I| / delta) / (2t))`` holding uniformly over ``I``
    with probability at least ``1 - delta``."""
    if not c > 0 or idx_size < 1 or not 0 < delta < 1 or t < 1:
        raise DomainError(f"bad arguments c={c}, idx_size={idx_size}, delta={delta}, t={t}")
    return c * math.sqrt(math.log(2 * idx_size / delta) / (2 * t))


def invert_hoeffding_t(c: float, idx_size: int, delta: float, eps: float) -> int:
    """Smallest ``t`` with ``hoeffding_eps(c, idx_size, delta, t) <= eps``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    hoeffding_eps(c, idx_size, delta, 1)
    t = max(1, math.ceil(c * c * math.log(2 * idx_size / delta) / (2 * eps * eps)))
    # guard the closed form against floating error at the boundary
    while t > 1 and hoeffding_eps(c, idx_size, delta, t - 1) <= eps:
        t -= 1
    while hoeffding_eps(c, idx_size, delta, t) > eps:
        t += 1
    return t


def ea(oracle: NoisyOracle, idx: Sequence[tuple], t: int, delta: float, c: float):
    """Mean of ``t`` fresh oracle draws per pair, plus the Hoeffding radius.

    Returns ``(means, eps_hat)`` with ``means`` aligned to ``idx``.
    """
    idx = list(idx)
    if not idx:
        raise EmptyIndexSet("EA needs a non-empty index set")
    if t < 1:
        raise DomainError("t must be at least 1")
    eps_hat = hoeffding_eps(c, len(idx), delta, t)
    means = np.array([oracle.sample_mean(i, s, t) for i, s in idx])
    return means, eps_hat


def prune_check(v_hat: float, upper_bound: float, eps_hat: float, n: int, w_star_hat: float) -> bool:
    return v_hat + upper_bound + 2 * eps_hat * n < w_star_hat


def select_candidates(active: Sequence, bounds, budget) -> list:
    """The ``budget`` active pairs with the lowest bounds, lowest first.

    ``bounds`` maps a pair to its bound. Ties keep the order of ``active``.
    """
    if budget is None or budget == UNBOUNDED:
        return list(active)
    budget = int(budget)
    if budget <= 0:
        return []
    ranked = sorted(active, key=lambda pair: bounds[pair], reverse=True)
    tail = ranked[-budget:] if budget < len(ranked) else ranked
    return tail[::-1]


@dataclass
class Schedules:
    sampling: list
    failure: list
    pruning: list = None

    def __post_init__(self):
        self.sampling = [int(t) for t in self.sampling]
        self.failure = [float(d) for d in self.failure]
        if self.pruning is None:
            self.pruning = [UNBOUNDED] * len(self.sampling)
        self.pruning = [UNBOUNDED if p is None or p == UNBOUNDED else int(p) for p in self.pruning]
        k = len(self.sampling)
        if k == 0 or len(self.failure) != k or len(self.pruning) != k:
            raise InvalidSchedule("schedules must be non-empty and of equal length")
        if any(t < 1 for t in self.sampling) or any(b >= a for a, b in zip(self.sampling[1:], self.sampling)):
            raise InvalidSchedule(f"sampling schedule must be strictly increasing positive integers: {self.sampling}")
        if any(not 0 < d < 1 for d in self.failure) or not sum(self.failure) < 1:
            raise InvalidSchedule(f"failure probabilities must lie in (0, 1) and sum below 1: {self.failure}")
        if any(p < 0 for p in self.pruning):
            raise InvalidSchedule("pruning budgets must be non-negative")

    def __len__(self):
        return len(self.sampling)


@dataclass
class EstimateTable:
    pairs: list
    mean: np.ndarray
    radius: np.ndarray
    status: list
    samples: np.ndarray

    @classmethod
    def initial(cls, pairs, c: float) -> "EstimateTable":
        k = len(pairs)
        return cls(list(pairs), np.zeros(k), np.full(k, c / 2), [Status.ACTIVE] * k, np.zeros(k, dtype=np.int64))

    def active_positions(self) -> list[int]:
        return [r for r, st in enumerate(self.status) if st is Status.ACTIVE]

    def rows(self):
        for r, (i, s) in enumerate(self.pairs):
            yield i, s, float(self.mean[r]), float(self.radius[r]), self.status[r].value, int(self.samples[r])


@dataclass
class IterationRecord:
    k: int
    t: int
    delta: float
    eps_hat: float
    active: list
    estimates: np.ndarray
    pruned: list = field(default_factory=list)
    w_star_hat: float | None = None


@dataclass
class LearnResult:
    estimates: EstimateTable
    eps_hat: float
    delta_spent: float
    delta_schedule: float
    iterations_run: int
    total_samples: int
    history: list = field(default_factory=list)

    def empirical_values(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        for r, (i, s) in enumerate(self.estimates.pairs):
            out[i, s] = self.estimates.mean[r]
        return out

    def to_dict(self) -> dict:
        return {
            "eps_hat": self.eps_hat,
            "delta_spent": self.delta_spent,
            "delta_schedule": self.delta_schedule,
            "iterations_run": self.iterations_run,
            "total_samples": self.total_samples,
            "active_pairs": len(self.estimates.active_positions()),
            "pruned_pairs": len(self.estimates.pairs) - len(self.estimates.active_positions()),
            "iterations": [
                {"k": h.k, "t": h.t, "delta": h.delta, "eps_hat": h.eps_hat, "active": len(h.active), "pruned": len(h.pruned)}
                for h in self.history
            ],
        }


def _unit_demand(oracle: NoisyOracle) -> bool:
    return isinstance(oracle.base, UnitDemandMatrix)


def default_index(oracle: NoisyOracle) -> list[tuple[int, int]]:
    """Singletons for unit-demand bases, every non-empty bundle otherwise."""
    n, m = oracle.num_buyers, oracle.num_goods
    if _unit_demand(oracle):
        return [(i, 1 << j) for i in range(n) for j in range(m)]
    return [(i, s) for i in range(n) for s in range(1, 1 << m)]


class _EmpiricalModel:
    """Welfare computations on the active part of an empirical market."""

    def __init__(self, oracle: NoisyOracle, pairs, means, active_rows):
        self.unit = _unit_demand(oracle)
        n, m = oracle.num_buyers, oracle.num_goods
        self.n = n
        if self.unit:
            self.values = np.zeros((n, m))
            self.allowed = np.zeros((n, m), dtype=bool)
            for r in active_rows:
                i, s = pairs[r]
                j = s.bit_length() - 1
                self.values[i, j] = means[r]
                self.allowed[i, j] = True
        else:
            values = np.zeros((n, 1 << m))
            self.allowed = np.zeros((n, 1 << m), dtype=bool)
            self.allowed[:, 0] = True
            for r in active_rows:
                i, s = pairs[r]
                values[i, s] = means[r]
                self.allowed[i, s] = True
            self.market = Market(values, allow_negative=True)

    def w_star(self) -> float:
        if self.unit:
            return max_welfare_unit_demand(self.values, self.allowed).value
        return max_welfare_exact(self.market, self.allowed).value

    def exact_bound(self, pair) -> float:
        i, s = pair
        if self.unit:
            return unit_demand_submarket_welfare(self.values, i, s.bit_length() - 1, self.allowed)
        sub = make_submarket(self.market, i, s)
        return max_welfare_exact(sub.market, submarket_allowed(self.allowed, sub)).value

    def relaxed(self):
        if self.unit:
            table = unit_demand_relaxed_bounds(self.values, self.allowed)
            return lambda pair: float(table[pair[0], pair[1].bit_length() - 1])
        table = relaxed_bounds(self.market, self.allowed)
        return lambda pair: float(table[pair[0], pair[1]])


def eap(
    oracle: NoisyOracle,
    schedules: Schedules,
    c: float,
    target_eps: float = 0.0,
    bound_mode=BoundMode.EXACT,
    idx: Sequence[tuple] | None = None,
) -> LearnResult:
    """Elicitation with pruning.

    Each round re-estimates every active pair with fresh samples, then drops
    pairs that provably belong to no welfare-maximizing allocation of the
    underlying market. ``idx`` defaults to :func:`default_index`.
    """
    bound_mode = BoundMode(bound_mode)
    if target_eps < 0:
        raise DomainError("target_eps must be non-negative")
    pairs = default_index(oracle) if idx is None else list(idx)
    if not pairs:
        raise EmptyIndexSet("EAP needs a non-empty index set")
    table = EstimateTable.initial(pairs, c)
    n = oracle.num_buyers
    history = []
    total = 0
    eps_hat = c / 2
    delta_spent = 0.0
    k = 0
    for k in range(1, len(schedules) + 1):
        active_rows = table.active_positions()
        if not active_rows:
            k -= 1
            break
        t, delta, budget = schedules.sampling[k - 1], schedules.failure[k - 1], schedules.pruning[k - 1]
        active = [pairs[r] for r in active_rows]
        means, eps_hat = ea(oracle, active, t, delta, c)
        delta_spent += delta
        total += t * len(active)
        table.mean[active_rows] = means
        table.radius[active_rows] = eps_hat
        table.samples[active_rows] += t
        record = IterationRecord(k, t, delta, eps_hat, active, means.copy())
        history.append(record)
        if eps_hat <= target_eps or k == len(schedules):
            break

        model = _EmpiricalModel(oracle, pairs, table.mean, active_rows)
        w_hat = model.w_star()
        record.w_star_hat = w_hat
        v_hat = dict(zip(active, means))
        prune = []
        if bound_mode is BoundMode.EXACT:
            for pair in select_candidates(active, v_hat, budget):
                if prune_check(v_hat[pair], model.exact_bound(pair), eps_hat, n, w_hat):
                    prune.append(pair)
        else:
            relaxed = model.relaxed()
            bounds = {pair: relaxed(pair) for pair in active}
            if bound_mode is BoundMode.RELAXED:
                for pair in select_candidates(active, bounds, budget):
                    if prune_check(v_hat[pair], bounds[pair], eps_hat, n, w_hat):
                        prune.append(pair)
            else:
                survivors = []
                for pair in active:
                    if prune_check(v_hat[pair], bounds[pair], eps_hat, n, w_hat):
                        prune.append(pair)
                    else:
                        survivors.append(pair)
                for pair in select_candidates(survivors, bounds, budget):
                    if prune_check(v_hat[pair], model.exact_bound(pair), eps_hat, n, w_hat):
                        prune.append(pair)
        record.pruned = prune
        position = {pair: r for r, pair in enumerate(pairs)}
        for pair in prune:
            table.status[position[pair]] = Status.PRUNED

    return LearnResult(table, eps_hat, delta_spent, float(sum(schedules.failure)), k, total, history)
