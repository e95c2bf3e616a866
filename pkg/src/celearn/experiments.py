"""Unit-demand experiment runner: learned-CE quality and EAP sample savings.

Every random quantity is derived from the master seed and the job's
coordinates (distribution, n, m, draw, eps), so results do not depend on
thread count or scheduling. Rows are written in job order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from celearn.errors import DomainError, InvalidDistinct
from celearn.learning import BoundMode, Schedules, ea, eap, invert_hoeffding_t
from celearn.market import LinearPricing, Outcome
from celearn.metrics import sample_efficiency, um_loss
from celearn.pricing import Objective, linear_ce_prices
from celearn.valuations import (
    VALUE_CAP,
    Distribution,
    NoiseSpec,
    NoisyOracle,
    UnitDemandMatrix,
    gen_unit_demand,
)
from celearn.welfare import max_welfare_unit_demand

DESK_SIZES = (5, 10)
FULL_SIZES = (5, 10, 15, 20)
DESK_DRAWS = 20
FULL_DRAWS = 50
DOUBLING_FAILURE = (0.025, 0.025, 0.025, 0.025)
_DISTS = list(Distribution)


@dataclass
class ExperimentConfig:
    distributions: list = field(default_factory=lambda: [d.value for d in Distribution])
    buyers: list = field(default_factory=lambda: list(DESK_SIZES))
    goods: list = field(default_factory=lambda: list(DESK_SIZES))
    noise: float = 1.0
    eps: list = field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2])
    draws: int = DESK_DRAWS
    seed: int = 0
    total_delta: float = 0.1
    bound_mode: str = BoundMode.EXACT.value
    budgets: list | None = None
    threads: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        self.distributions = [Distribution(d).value for d in self.distributions]
        BoundMode(self.bound_mode)
        if self.draws < 1 or self.threads < 1:
            raise ValueError("draws and threads must be positive")
        if not self.noise > 0:
            raise ValueError("noise half-width must be positive")
        if any(not e > 0 for e in self.eps):
            raise ValueError("eps values must be positive")

    @classmethod
    def full(cls, **overrides) -> "ExperimentConfig":
        base = dict(buyers=list(FULL_SIZES), goods=list(FULL_SIZES), draws=FULL_DRAWS)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    @property
    def value_range(self) -> float:
        return VALUE_CAP + self.noise

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("threads")
        out.pop("out_dir")
        return out


@dataclass
class ResultRow:
    distribution: str
    n: int
    m: int
    noise: float
    eps: float
    draw: int
    objective: str
    um_loss: float | None
    ea_samples: int
    eap_samples: int | None
    eps_achieved: float
    savings: float | None = None
    wall_time: float = 0.0

    # wall_time is reported in the manifest so CSVs stay byte-reproducible
    CSV_FIELDS = (
        "distribution", "n", "m", "noise", "eps", "draw", "objective",
        "um_loss", "ea_samples", "eap_samples", "eps_achieved", "savings",
    )

    def csv_row(self) -> list:
        out = []
        for name in self.CSV_FIELDS:
            val = getattr(self, name)
            out.append("" if val is None else repr(val) if isinstance(val, float) else val)
        return out


def build_doubling_schedule(eps: float, c: float, idx_size: int, total_delta: float = 0.1, budgets=None) -> Schedules:
    """Sampling ``[t/4, t/2, t, 2t]`` around the EA requirement ``t(eps)``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    t = invert_hoeffding_t(c, idx_size, total_delta, eps)
    sampling = []
    for factor in (0.25, 0.5, 1.0, 2.0):
        val = max(1, math.floor(t * factor + 0.5))
        if sampling and val <= sampling[-1]:
            val = sampling[-1] + 1
        sampling.append(val)
    return Schedules(sampling, list(DOUBLING_FAILURE), budgets)


def _seed(config: ExperimentConfig, *coords) -> int:
    seq = np.random.SeedSequence([config.seed & 0xFFFFFFFF, config.seed >> 32 & 0xFFFFFFFF, *coords])
    return int(seq.generate_state(1, np.uint64)[0])


def _draw_market(config, dist: str, n: int, m: int, draw: int) -> UnitDemandMatrix:
    return gen_unit_demand(dist, n, m, _seed(config, 0, _DISTS.index(Distribution(dist)), n, m, draw))


def _oracle(config, V, dist, n, m, draw, stream) -> NoisyOracle:
    seed = _seed(config, 1, _DISTS.index(Distribution(dist)), n, m, draw, stream)
    return NoisyOracle(V, NoiseSpec(config.noise), seed, config.value_range)


def _cells(config):
    for dist in config.distributions:
        for n in config.buyers:
            for m in config.goods:
                if Distribution(dist) is Distribution.PREFERRED_GOOD_DISTINCT and n > m:
                    continue
                for draw in range(config.draws):
                    yield dist, n, m, draw


def _learned_ce_rows(config, dist, n, m, draw) -> list[ResultRow]:
    V = _draw_market(config, dist, n, m, draw)
    c = config.value_range
    singles = [(i, 1 << j) for i in range(n) for j in range(m)]
    rows = []
    for e_index, eps in enumerate(config.eps):
        start = time.perf_counter()
        oracle = _oracle(config, V, dist, n, m, draw, e_index)
        t = invert_hoeffding_t(c, len(singles), config.total_delta, eps)
        means, eps_hat = ea(oracle, singles, t, config.total_delta, c)
        # truth is non-negative, so clipping never moves an estimate away from it
        V_hat = UnitDemandMatrix(np.clip(means.reshape(n, m), 0.0, None))
        alloc = max_welfare_unit_demand(V_hat).allocation
        for objective in (Objective.MIN_REVENUE, Objective.MAX_REVENUE):
            sol = linear_ce_prices(V_hat, alloc, objective, check=False)
            loss = um_loss(V, Outcome(alloc, LinearPricing(sol.prices)))
            rows.append(ResultRow(dist, n, m, config.noise, eps, draw, objective.value, loss,
                                  t * len(singles), None, eps_hat))
        elapsed = time.perf_counter() - start
        for row in rows[-2:]:
            row.wall_time = elapsed
    return rows


def _savings_rows(config, dist, n, m, draw) -> list[ResultRow]:
    V = _draw_market(config, dist, n, m, draw)
    c = config.value_range
    idx_size = n * m
    rows = []
    for e_index, eps in enumerate(config.eps):
        start = time.perf_counter()
        oracle = _oracle(config, V, dist, n, m, draw, 100 + e_index)
        budgets = config.budgets
        schedule = build_doubling_schedule(eps, c, idx_size, config.total_delta, budgets)
        result = eap(oracle, schedule, c, 0.0, config.bound_mode)
        ea_samples = idx_size * invert_hoeffding_t(c, idx_size, config.total_delta, result.eps_hat)
        rows.append(ResultRow(dist, n, m, config.noise, eps, draw, "", None, ea_samples,
                              result.total_samples, result.eps_hat,
                              sample_efficiency(ea_samples, result.total_samples),
                              time.perf_counter() - start))
    return rows


def _run(config: ExperimentConfig, job, name: str) -> list[ResultRow]:
    cells = list(_cells(config))
    out_dir = Path(config.out_dir) if config.out_dir else None
    started = time.perf_counter()
    rows = []
    writer = fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / f"{name}.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ResultRow.CSV_FIELDS)
    try:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            for batch in pool.map(lambda cell: job(config, *cell), cells):
                rows.extend(batch)
                if writer:
                    writer.writerows(r.csv_row() for r in batch)
                    fh.flush()
    finally:
        if fh:
            fh.close()
    if out_dir:
        extra = {}
        if name == "heatmap":
            extra = write_heatmaps(rows, config, out_dir)
        _write_manifest(out_dir, name, config, rows, time.perf_counter() - started, extra)
    return rows


def run_table1_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """UM-loss in the true market of CE learned by EA, for min and max revenue prices."""
    return _run(config, _learned_ce_rows, "table1")


def run_sample_efficiency_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """EAP sample counts versus EA at EAP's achieved guarantee."""
    return _run(config, _savings_rows, "heatmap")


def savings_grid(rows, dist: str, eps: float, buyers, goods) -> np.ndarray:
    """Mean savings fraction per (n, m) cell; NaN where no draws exist."""
    acc = defaultdict(list)
    for r in rows:
        if r.distribution == dist and r.eps == eps and r.savings is not None:
            acc[r.n, r.m].append(r.savings)
    grid = np.full((len(buyers), len(goods)), np.nan)
    for a, n in enumerate(buyers):
        for b, m in enumerate(goods):
            if acc[n, m]:
                grid[a, b] = float(np.mean(acc[n, m]))
    return grid


def write_heatmaps(rows, config: ExperimentConfig, out_dir: Path) -> dict:
    written = {}
    for dist in config.distributions:
        for eps in config.eps:
            grid = savings_grid(rows, dist, eps, config.buyers, config.goods)
            path = out_dir / f"heatmap_{dist}_eps{eps:g}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["n\\m", *config.goods])
                for n, line in zip(config.buyers, grid):
                    writer.writerow([n, *("" if np.isnan(x) else repr(float(x)) for x in line)])
            written[path.name] = _sha256(path)
    return written


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, name: str, config, rows, wall: float, extra: dict) -> None:
    manifest = {
        "experiment": name,
        "config": config.echo(),
        "files": {f"{name}.csv": _sha256(out_dir / f"{name}.csv"), **extra},
        "rows": len(rows),
        "wall_time_seconds": wall,
        "row_wall_time_seconds": sum(r.wall_time for r in rows),
    }
    (out_dir / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def check_distinct_grid(config: ExperimentConfig) -> None:
    if Distribution.PREFERRED_GOOD_DISTINCT.value in config.distributions:
        if not any(n <= m for n in config.buyers for m in config.goods):
            raise InvalidDistinct("no (n, m) cell with n <= m for preferred-good-distinct")
