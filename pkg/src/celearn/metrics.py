"""Scoring learned outcomes against the ground-truth market."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from celearn.market import LinearPricing, Market, Outcome, um_slack_per_buyer
from celearn.valuations import UnitDemandMatrix


@dataclass
class EvalReport:
    um_loss_per_buyer: list
    um_loss_market: float
    ea_samples: int | None = None
    eap_samples: int | None = None
    savings_fraction: float | None = None
    eps_target: float | None = None
    eps_achieved: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _unit_demand_losses(V: UnitDemandMatrix, outcome: Outcome) -> np.ndarray:
    if not isinstance(outcome.pricing, LinearPricing):
        raise TypeError("the unit-demand fast path needs linear prices")
    prices = outcome.pricing.prices
    if len(prices) != V.num_goods or len(outcome.allocation) != V.num_buyers:
        raise ValueError("outcome does not match the unit-demand market")
    # with non-negative prices a unit-demand buyer's best bundle is empty or a singleton
    best = np.maximum((V.matrix - prices[None, :]).max(axis=1), 0.0)
    realized = np.array(
        [V.value(i, s) - outcome.pricing.price(i, s) for i, s in enumerate(outcome.allocation)]
    )
    return best - realized


def um_losses(truth: Market | UnitDemandMatrix, outcome: Outcome) -> np.ndarray:
    if isinstance(truth, UnitDemandMatrix):
        return _unit_demand_losses(truth, outcome)
    return um_slack_per_buyer(truth, outcome)


def um_loss_buyer(truth, outcome: Outcome, buyer: int) -> float:
    """Best utility ``buyer`` could get at the outcome's prices minus what it gets."""
    return float(um_losses(truth, outcome)[buyer])


def um_loss(truth, outcome: Outcome) -> float:
    return float(um_losses(truth, outcome).max())


def sample_efficiency(ea_samples: int, eap_samples: int) -> float:
    """Fraction of EA's samples saved by EAP (negative when EAP used more)."""
    if ea_samples <= 0:
        raise ZeroDivisionError("ea_samples must be positive")
    return 1.0 - eap_samples / ea_samples


def evaluate(truth, outcome: Outcome, **extra) -> EvalReport:
    losses = um_losses(truth, outcome)
    report = EvalReport([float(x) for x in losses], float(losses.max()), **extra)
    if report.ea_samples and report.eap_samples is not None:
        report.savings_fraction = sample_efficiency(report.ea_samples, report.eap_samples)
    return report
