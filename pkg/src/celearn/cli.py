"""Command-line interface.

Exit codes: 0 success, 1 bad input or config, 2 size cap exceeded,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from celearn import experiments
from celearn.errors import CELearnError, LPNumericalFailure, TooManyGoods
from celearn.learning import (
    BoundMode,
    EstimateTable,
    LearnResult,
    Schedules,
    default_index,
    ea,
    eap,
    invert_hoeffding_t,
)
from celearn.market import BundlePricing, LinearPricing, Market, Outcome
from celearn.metrics import evaluate
from celearn.pricing import Objective, linear_ce_prices
from celearn.valuations import (
    Distribution,
    NoiseSpec,
    NoisyOracle,
    gen_unit_demand,
    load_market,
    load_unit_demand_csv,
    market_to_dict,
    save_market,
    save_unit_demand_csv,
    unit_demand_to_market,
)
from celearn.welfare import max_welfare_exact, max_welfare_unit_demand

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_SOLVER = 0, 1, 2, 3


def _out_path(args, name: str) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    if args.out_dir is not None:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return Path(args.out_dir) / name
    return None


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=1))


def _load_source(args):
    if getattr(args, "unit_demand", None):
        return load_unit_demand_csv(args.unit_demand)
    if getattr(args, "market", None):
        return load_market(args.market)
    raise ValueError("need --market or --unit-demand")


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _parse_allocation(text: str) -> tuple:
    return tuple(int(x, 0) for x in text.split(",") if x.strip())


def _parse_list(text: str, kind=float) -> list:
    return [kind(x) for x in text.split(",") if x.strip()]


def _parse_budgets(text: str) -> list:
    return [math.inf if x.strip().lower() in ("inf", "unbounded", "none") else int(x) for x in text.split(",") if x.strip()]


def cmd_generate(args) -> int:
    V = gen_unit_demand(args.dist, args.buyers, args.goods, _seed(args))
    path = _out_path(args, "market.csv" if args.format == "csv" else "market.json")
    if args.format == "csv":
        if path is None:
            csv.writer(sys.stdout).writerows([repr(float(x)) for x in row] for row in V.matrix)
        else:
            save_unit_demand_csv(V, path)
    else:
        market = unit_demand_to_market(V)
        if path is None:
            _emit(market_to_dict(market))
        else:
            save_market(market, path)
    return EXIT_OK


def cmd_solve_welfare(args) -> int:
    source = _load_source(args)
    if isinstance(source, Market):
        result = max_welfare_exact(source)
    else:
        result = max_welfare_unit_demand(source)
    _emit({"value": result.value, "allocation": list(result.allocation)})
    return EXIT_OK


def cmd_solve_prices(args) -> int:
    source = _load_source(args)
    if args.allocation:
        alloc = _parse_allocation(args.allocation)
    elif isinstance(source, Market):
        alloc = max_welfare_exact(source).allocation
    else:
        alloc = max_welfare_unit_demand(source).allocation
    sol = linear_ce_prices(source, alloc, args.objective)
    _emit({
        "allocation": list(alloc),
        "prices": [float(p) for p in sol.prices],
        "total_slack": sol.total_slack,
        "objective": sol.objective_used.value,
        "slack": [{"buyer": i, "bundle": s, "slack": a} for (i, s), a in sorted(sol.per_pair_slack.items())],
    })
    return EXIT_OK


def _oracle(args, source) -> NoisyOracle:
    c = args.c
    oracle = NoisyOracle(source, NoiseSpec(args.noise_half_width), _seed(args))
    if c is None:
        c = oracle.value_range_c
    oracle.value_range_c = c
    return oracle


def _write_learn_outputs(args, result: LearnResult, name: str) -> None:
    doc = result.to_dict()
    path = _out_path(args, f"{name}.csv")
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["buyer", "bundle", "mean", "radius", "status", "samples"])
            writer.writerows(result.estimates.rows())
        doc["estimates_csv"] = str(path)
    _emit(doc)


def cmd_run_ea(args) -> int:
    source = _load_source(args)
    oracle = _oracle(args, source)
    c = oracle.value_range_c
    idx = default_index(oracle)
    t = invert_hoeffding_t(c, len(idx), args.delta, args.eps)
    means, eps_hat = ea(oracle, idx, t, args.delta, c)
    table = EstimateTable.initial(idx, c)
    table.mean[:] = means
    table.radius[:] = eps_hat
    table.samples[:] = t
    result = LearnResult(table, eps_hat, args.delta, args.delta, 1, t * len(idx))
    _write_learn_outputs(args, result, "ea_estimates")
    return EXIT_OK


def cmd_run_eap(args) -> int:
    source = _load_source(args)
    oracle = _oracle(args, source)
    c = oracle.value_range_c
    sampling = _parse_list(args.schedule, int)
    deltas = _parse_list(args.deltas) if args.deltas else [0.1 / len(sampling)] * len(sampling)
    budgets = _parse_budgets(args.budgets) if args.budgets else None
    schedules = Schedules(sampling, deltas, budgets)
    result = eap(oracle, schedules, c, args.target_eps, args.bound_mode)
    _write_learn_outputs(args, result, "eap_estimates")
    return EXIT_OK


def _load_outcome(path, num_goods: int) -> Outcome:
    doc = json.loads(Path(path).read_text())
    alloc = tuple(int(s) for s in doc["allocation"])
    prices = doc["prices"]
    if "linear" in prices:
        pricing = LinearPricing(prices["linear"])
    else:
        table = np.zeros((len(alloc), 1 << num_goods))
        for rec in prices["bundle"]:
            table[rec["buyer"], rec["bundle"]] = rec["price"]
        pricing = BundlePricing(table)
    return Outcome(alloc, pricing)


def cmd_um_loss(args) -> int:
    truth = load_market(args.truth) if not args.truth.endswith(".csv") else load_unit_demand_csv(args.truth)
    outcome = _load_outcome(args.outcome, truth.num_goods)
    report = evaluate(truth, outcome)
    _emit({"um_loss_per_buyer": report.um_loss_per_buyer, "um_loss_market": report.um_loss_market})
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads, "out_dir": args.out_dir}
    if args.draws is not None:
        overrides["draws"] = args.draws
    if args.noise_half_width is not None:
        overrides["noise"] = args.noise_half_width
    if args.eps:
        overrides["eps"] = _parse_list(args.eps)
    elif args.kind == "heatmap" and not args.config:
        overrides["eps"] = [0.05]
    if args.distributions:
        overrides["distributions"] = args.distributions.split(",")
    if args.buyers:
        overrides["buyers"] = _parse_list(args.buyers, int)
    if args.goods:
        overrides["goods"] = _parse_list(args.goods, int)
    if args.bound_mode:
        overrides["bound_mode"] = args.bound_mode
    if args.budgets:
        overrides["budgets"] = _parse_budgets(args.budgets)
    if args.config:
        config = experiments.ExperimentConfig.from_file(args.config, **overrides)
    else:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        factory = experiments.ExperimentConfig.full if args.full else experiments.ExperimentConfig
        config = factory(**overrides)
    if config.out_dir is None:
        config.out_dir = "results"
    experiments.check_distinct_grid(config)
    if args.kind == "table1":
        rows = experiments.run_table1_experiment(config)
    else:
        rows = experiments.run_sample_efficiency_experiment(config)
    print(f"wrote {len(rows)} rows to {config.out_dir}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without defaults so that values
        # given before the subcommand are not overwritten
        flags = argparse.ArgumentParser(add_help=False)
        default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        flags.add_argument("--seed", type=int, default=default(None), help="master seed (default 0)")
        flags.add_argument("--out-dir", default=default(None))
        flags.add_argument("--threads", type=int, default=default(None))
        flags.add_argument("--full", action="store_true", default=default(False), help="large grid: sizes 5-20, 50 draws")
        return flags

    parser = argparse.ArgumentParser(prog="celearn", description=__doc__, parents=[global_flags(False)])
    common = global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="draw a unit-demand market")
    p.add_argument("--dist", choices=[d.value for d in Distribution], default="uniform")
    p.add_argument("--buyers", type=int, required=True)
    p.add_argument("--goods", type=int, required=True)
    p.add_argument("--format", choices=["market", "csv"], default="market")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve-welfare", parents=[common], help="welfare-maximizing allocation")
    p.add_argument("--market")
    p.add_argument("--unit-demand")
    p.set_defaults(func=cmd_solve_welfare)

    p = sub.add_parser("solve-prices", parents=[common], help="linear CE prices for an allocation")
    p.add_argument("--market")
    p.add_argument("--unit-demand")
    p.add_argument("--allocation", help="comma-separated bundle bitmasks, one per buyer")
    p.add_argument("--objective", choices=[o.value for o in Objective], default="min-slack")
    p.set_defaults(func=cmd_solve_prices)

    for name, func in (("run-ea", cmd_run_ea), ("run-eap", cmd_run_eap)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--market")
        p.add_argument("--unit-demand")
        p.add_argument("--noise-half-width", type=float, required=True)
        p.add_argument("--c", type=float, default=None, help="value range (default: max value + noise)")
        p.add_argument("--out", default=None, help="estimate table CSV")
        if name == "run-ea":
            p.add_argument("--eps", type=float, required=True)
            p.add_argument("--delta", type=float, default=0.1)
        else:
            p.add_argument("--schedule", required=True)
            p.add_argument("--deltas")
            p.add_argument("--budgets")
            p.add_argument("--bound-mode", choices=[b.value for b in BoundMode], default="exact")
            p.add_argument("--target-eps", type=float, default=0.0)
        p.set_defaults(func=func)

    p = sub.add_parser("um-loss", parents=[common], help="UM-loss of an outcome in a true market")
    p.add_argument("--truth", required=True)
    p.add_argument("--outcome", required=True)
    p.set_defaults(func=cmd_um_loss)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment grid")
    p.add_argument("kind", choices=["table1", "heatmap"])
    p.add_argument("--config")
    p.add_argument("--draws", type=int)
    p.add_argument("--noise-half-width", type=float)
    p.add_argument("--eps")
    p.add_argument("--distributions")
    p.add_argument("--buyers")
    p.add_argument("--goods")
    p.add_argument("--bound-mode", choices=[b.value for b in BoundMode])
    p.add_argument("--budgets")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TooManyGoods as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except LPNumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (CELearnError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
