"""Learning competitive equilibria of combinatorial markets from noisy value queries."""

from celearn.market import (
    BundlePricing,
    LinearPricing,
    Market,
    Outcome,
    bundle,
    is_approx_ce,
    is_feasible,
    market_distance,
    rm_holds,
    um_violation,
    welfare,
)
from celearn.valuations import (
    Distribution,
    NoiseSpec,
    NoisyOracle,
    UnitDemandMatrix,
    gen_unit_demand,
    load_market,
    save_market,
    unit_demand_to_market,
)
from celearn.welfare import (
    WelfareResult,
    make_submarket,
    max_welfare_exact,
    max_welfare_unit_demand,
    relaxed_upper_bound,
)
from celearn.pricing import Objective, PriceSolution, linear_ce_prices, verify_price_solution
from celearn.learning import (
    BoundMode,
    LearnResult,
    Schedules,
    ea,
    eap,
    hoeffding_eps,
    invert_hoeffding_t,
    prune_check,
    select_candidates,
)
from celearn.metrics import EvalReport, sample_efficiency, um_loss, um_loss_buyer

__all__ = [name for name in dir() if not name.startswith("_")]
