"""Value sources: unit-demand generators, market files and the noisy oracle."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from celearn.errors import InvalidDistinct, ParseError, SchemaViolation, TooManyGoods
from celearn.market import MAX_DENSE_GOODS, Market, subset_max

VALUE_CAP = 10.0


class Distribution(str, Enum):
    UNIFORM = "uniform"
    PREFERRED_GOOD = "preferred-good"
    PREFERRED_GOOD_DISTINCT = "preferred-good-distinct"
    PREFERRED_SUBSET = "preferred-subset"


@dataclass(frozen=True, eq=False)
class UnitDemandMatrix:
    """``matrix[i, j]`` is buyer ``i``'s value for good ``j`` alone.

    A buyer's value for a bundle is its best single good in the bundle.
    """

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float, copy=True)
        if matrix.ndim != 2 or 0 in matrix.shape:
            raise ValueError("unit-demand matrix must be a non-empty 2-d array")
        if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
            raise ValueError("unit-demand values must be finite and non-negative")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def num_buyers(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_goods(self) -> int:
        return self.matrix.shape[1]

    def value(self, buyer: int, mask: int) -> float:
        row = self.matrix[buyer]
        return max((row[j] for j in range(self.num_goods) if mask >> j & 1), default=0.0)

    def __eq__(self, other):
        if not isinstance(other, UnitDemandMatrix):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)


def gen_unit_demand(dist, num_buyers: int, num_goods: int, seed) -> UnitDemandMatrix:
    dist = Distribution(dist)
    if num_buyers < 1 or num_goods < 1:
        raise ValueError("need at least one buyer and one good")
    rng = np.random.default_rng(seed)
    n, m = num_buyers, num_goods
    if dist is Distribution.UNIFORM:
        return UnitDemandMatrix(rng.uniform(0.0, VALUE_CAP, size=(n, m)))
    if dist in (Distribution.PREFERRED_GOOD, Distribution.PREFERRED_GOOD_DISTINCT):
        if dist is Distribution.PREFERRED_GOOD_DISTINCT:
            if n > m:
                raise InvalidDistinct(f"distinct preferred goods need n <= m, got n={n}, m={m}")
            preferred = rng.permutation(m)[:n]
        else:
            preferred = rng.integers(0, m, size=n)
        top = rng.uniform(0.0, VALUE_CAP, size=n)
        # good with 0-based index j decays by 2**(j + 1)
        decay = 2.0 ** np.arange(1, m + 1)
        matrix = top[:, None] / decay[None, :]
        matrix[np.arange(n), preferred] = top
        return UnitDemandMatrix(matrix)
    interest = rng.integers(0, 1 << m, size=n)
    member = (interest[:, None] >> np.arange(m)[None, :]) & 1
    matrix = rng.uniform(0.0, VALUE_CAP, size=(n, m)) * member
    return UnitDemandMatrix(matrix)


def unit_demand_to_market(V: UnitDemandMatrix) -> Market:
    n, m = V.matrix.shape
    if m > MAX_DENSE_GOODS:
        raise TooManyGoods(f"dense markets are capped at {MAX_DENSE_GOODS} goods")
    values = np.zeros((n, 1 << m))
    for j in range(m):
        values[:, 1 << j] = V.matrix[:, j]
    return Market(subset_max(values))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive zero-mean uniform noise on ``[-half_width, half_width]``."""

    half_width: float

    def __post_init__(self):
        if not self.half_width >= 0 or not math.isfinite(self.half_width):
            raise ValueError("noise half-width must be finite and non-negative")


@dataclass(eq=False)
class NoisyOracle:
    """Noisy value queries against a hidden ground-truth market.

    Every (buyer, bundle) cell keeps its own batch counter, and batch ``b`` of
    cell ``(i, S)`` is drawn from a generator keyed by ``(seed, i, S, b)``.
    The samples a cell produces therefore never depend on which other cells
    were queried or in what order.
    """

    base: Market | UnitDemandMatrix
    noise: NoiseSpec
    rng_seed: int = 0
    value_range_c: float | None = None
    _batches: dict = field(default_factory=dict, init=False, repr=False)
    queries: int = field(default=0, init=False)

    def __post_init__(self):
        if isinstance(self.noise, (int, float)):
            self.noise = NoiseSpec(float(self.noise))
        if self.value_range_c is None:
            self.value_range_c = float(np.max(self._base_array())) + self.noise.half_width

    def _base_array(self) -> np.ndarray:
        return self.base.matrix if isinstance(self.base, UnitDemandMatrix) else self.base.values

    @property
    def num_buyers(self) -> int:
        return self.base.num_buyers

    @property
    def num_goods(self) -> int:
        return self.base.num_goods

    def draw(self, buyer: int, mask: int, t: int) -> np.ndarray:
        """``t`` fresh noisy samples of ``v_buyer(mask)``."""
        if t < 0:
            raise ValueError("sample count must be non-negative")
        key = (buyer, mask)
        batch = self._batches.get(key, 0)
        self._batches[key] = batch + 1
        self.queries += t
        value = self.base.value(buyer, mask)
        a = self.noise.half_width
        if a == 0:
            return np.full(t, value)
        rng = np.random.default_rng([int(self.rng_seed) & 0xFFFFFFFFFFFFFFFF, buyer, mask, batch])
        return value + a * (2.0 * rng.random(t) - 1.0)

    def sample_mean(self, buyer: int, mask: int, t: int) -> float:
        if t < 1:
            raise ValueError("need at least one sample")
        draws = self.draw(buyer, mask, t)
        if self.noise.half_width == 0:
            # averaging t equal floats can be off by an ulp
            return float(draws[0])
        return float(np.mean(draws))


def oracle_sample(oracle: NoisyOracle, buyer: int, mask: int) -> float:
    return float(oracle.draw(buyer, mask, 1)[0])


def market_to_dict(market: Market) -> dict:
    records = [
        {"buyer": i, "bundle": s, "value": float(market.values[i, s])}
        for i in range(market.num_buyers)
        for s in range(1, 1 << market.num_goods)
        if market.values[i, s] != 0
    ]
    return {"goods": market.num_goods, "buyers": market.num_buyers, "values": records}


def _positive_int(doc: dict, key: str) -> int:
    val = doc.get(key)
    if not isinstance(val, int) or isinstance(val, bool) or val < 1:
        raise SchemaViolation(f"'{key}' must be a positive integer", val)
    return val


def market_from_dict(doc) -> Market:
    if not isinstance(doc, dict):
        raise SchemaViolation("market document must be an object", doc)
    m = _positive_int(doc, "goods")
    n = _positive_int(doc, "buyers")
    if m > MAX_DENSE_GOODS:
        raise TooManyGoods(f"dense markets are capped at {MAX_DENSE_GOODS} goods")
    records = doc.get("values", [])
    if not isinstance(records, list):
        raise SchemaViolation("'values' must be a list", records)
    values = np.zeros((n, 1 << m))
    for rec in records:
        if not isinstance(rec, dict) or not {"buyer", "bundle", "value"} <= rec.keys():
            raise SchemaViolation("record needs buyer, bundle and value", rec)
        i, s, v = rec["buyer"], rec["bundle"], rec["value"]
        if not isinstance(i, int) or not 0 <= i < n:
            raise SchemaViolation("buyer index out of range", rec)
        if not isinstance(s, int) or not 0 <= s < 1 << m:
            raise SchemaViolation("bundle bitmask out of range", rec)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise SchemaViolation("value must be a finite number", rec)
        if v < 0:
            raise SchemaViolation("value must be non-negative", rec)
        if s == 0 and v != 0:
            raise SchemaViolation("empty bundle must have value 0", rec)
        values[i, s] = v
    return Market(values)


def load_market(path) -> Market:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return market_from_dict(doc)


def save_market(market: Market, path) -> None:
    Path(path).write_text(json.dumps(market_to_dict(market), indent=1) + "\n")


def load_unit_demand_csv(path) -> UnitDemandMatrix:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: expected a non-empty rectangular table")
    try:
        return UnitDemandMatrix(np.array(rows))
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc


def save_unit_demand_csv(V: UnitDemandMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in V.matrix:
            writer.writerow([repr(float(x)) for x in row])
