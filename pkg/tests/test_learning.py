import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celearn.errors import DomainError, EmptyIndexSet, InvalidSchedule
from celearn.learning import (
    UNBOUNDED,
    BoundMode,
    Schedules,
    Status,
    default_index,
    ea,
    eap,
    hoeffding_eps,
    invert_hoeffding_t,
    prune_check,
    select_candidates,
)
from celearn.market import Market
from celearn.valuations import NoisyOracle, UnitDemandMatrix, gen_unit_demand
from oracles import allocations, random_values


def _decimal_radius(c, idx, delta, t):
    getcontext().prec = 40
    inner = (Decimal(2 * idx) / Decimal(str(delta))).ln() / (2 * Decimal(t))
    return Decimal(str(c)) * inner.sqrt()


# Hoeffding radius


def test_hoeffding_reference_value():
    expected = _decimal_radius(10, 100, 0.1, 5000)
    assert float(expected) == pytest.approx(0.2757, abs=5e-5)
    assert hoeffding_eps(10, 100, 0.1, 5000) == pytest.approx(float(expected), rel=1e-14)


def test_hoeffding_scaling_identities():
    base = hoeffding_eps(7.0, 30, 0.05, 123)
    assert hoeffding_eps(7.0, 60, 0.1, 123) == pytest.approx(base, rel=1e-14)
    assert hoeffding_eps(7.0, 30, 0.05, 4 * 123) == pytest.approx(base / 2, rel=1e-14)


@pytest.mark.parametrize("args", [(0, 1, 0.1, 1), (1, 0, 0.1, 1), (1, 1, 0.0, 1), (1, 1, 1.0, 1), (1, 1, 0.1, 0)])
def test_hoeffding_domain(args):
    with pytest.raises(DomainError):
        hoeffding_eps(*args)


def test_invert_reference_value():
    assert abs(invert_hoeffding_t(10, 100, 0.1, 0.2757) - 5000) <= 1
    with pytest.raises(DomainError):
        invert_hoeffding_t(10, 100, 0.1, 0.0)


@given(
    st.floats(0.5, 500), st.integers(1, 10_000), st.floats(1e-4, 0.9), st.floats(0.01, 5.0)
)
@settings(max_examples=200)
def test_invert_is_minimal(c, idx, delta, eps):
    t = invert_hoeffding_t(c, idx, delta, eps)
    assert hoeffding_eps(c, idx, delta, t) <= eps
    assert t == 1 or hoeffding_eps(c, idx, delta, t - 1) > eps
    closed = math.ceil(c * c * math.log(2 * idx / delta) / (2 * eps * eps))
    assert abs(t - max(closed, 1)) <= 1


def test_invert_halving_eps_quadruples_t():
    t1 = invert_hoeffding_t(11, 25, 0.1, 0.2)
    t2 = invert_hoeffding_t(11, 25, 0.1, 0.1)
    assert abs(t2 - 4 * t1) <= 4


# EA


def test_ea_zero_noise_is_exact():
    V = gen_unit_demand("uniform", 3, 3, 0)
    oracle = NoisyOracle(V, 0.0, 1, 10.0)
    idx = default_index(oracle)
    means, eps_hat = ea(oracle, idx, 7, 0.1, 10.0)
    assert np.array_equal(means, [V.value(i, s) for i, s in idx])
    assert eps_hat == hoeffding_eps(10.0, len(idx), 0.1, 7)


def test_ea_mean_of_exactly_t_draws():
    V = gen_unit_demand("uniform", 2, 2, 0)
    oracle = NoisyOracle(V, 1.0, 4)
    replay = NoisyOracle(V, 1.0, 4)
    idx = [(0, 1), (1, 2)]
    means, _ = ea(oracle, idx, 13, 0.1, 11.0)
    assert oracle.queries == 26
    for (i, s), mean in zip(idx, means):
        assert mean == pytest.approx(replay.draw(i, s, 13).mean(), abs=0)


def test_ea_errors():
    oracle = NoisyOracle(UnitDemandMatrix([[1.0]]), 1.0)
    with pytest.raises(EmptyIndexSet):
        ea(oracle, [], 5, 0.1, 2.0)
    with pytest.raises(DomainError):
        ea(oracle, [(0, 1)], 0, 0.1, 2.0)


def test_ea_coverage_small_monte_carlo():
    V = gen_unit_demand("uniform", 5, 5, 3)
    idx = [(i, 1 << j) for i in range(5) for j in range(5)]
    truth = np.array([V.value(i, s) for i, s in idx])
    hits = 0
    for run in range(100):
        means, eps_hat = ea(NoisyOracle(V, 1.0, run), idx, 200, 0.1, 11.0)
        hits += np.max(np.abs(means - truth)) <= eps_hat
    assert hits >= 88


def test_default_index():
    assert default_index(NoisyOracle(UnitDemandMatrix(np.ones((2, 3))), 1.0)) == [
        (0, 1), (0, 2), (0, 4), (1, 1), (1, 2), (1, 4)
    ]
    general = NoisyOracle(Market(np.zeros((2, 4))), 1.0)
    assert default_index(general) == [(i, s) for i in range(2) for s in (1, 2, 3)]


# pruning criterion and candidates


def test_prune_check_examples():
    assert prune_check(1.0, 2.0, 0.1, 2, 4.0)
    assert not prune_check(1.0, 2.0, 0.25, 2, 4.0)
    assert not prune_check(1.0, 2.0, 10.0, 2, 4.0)


@given(
    st.floats(-10, 10), st.floats(0, 20), st.floats(0, 5), st.integers(1, 6), st.floats(0, 40),
    st.floats(0, 5), st.floats(0, 10),
)
def test_prune_check_monotone(v, bound, eps, n, w, shrink, lift):
    if prune_check(v, bound, eps, n, w):
        assert prune_check(v, bound, max(eps - shrink, 0.0), n, w)
        assert prune_check(v, bound, eps, n, w + lift)


def test_select_candidates_examples():
    bounds = {"A": 5.0, "B": 2.0, "C": 9.0}
    active = ["A", "B", "C"]
    assert select_candidates(active, bounds, 2) == ["B", "A"]
    assert select_candidates(active, bounds, 0) == []
    assert sorted(select_candidates(active, bounds, 10)) == active
    assert select_candidates(active, bounds, UNBOUNDED) == active


# schedules


def test_schedules_validation():
    Schedules([10, 20], [0.05, 0.05])
    for bad in (
        ([20, 10], [0.05, 0.05]),
        ([10, 10], [0.05, 0.05]),
        ([10, 20], [0.5, 0.5]),
        ([10, 20], [0.05]),
        ([], []),
        ([0, 5], [0.01, 0.01]),
    ):
        with pytest.raises(InvalidSchedule):
            Schedules(*bad)
    with pytest.raises(InvalidSchedule):
        Schedules([1, 2], [0.1, 0.1], [1, -1])


# EAP


def _first_price():
    return Market([[0.0, 9.0], [0.0, 1.0], [0.0, 1.0]])


def test_eap_first_price_prunes_low_bidders_early():
    market = _first_price()
    c = 9.1
    schedules = Schedules([100, 1000, 10_000], [0.03, 0.03, 0.03])
    result = eap(NoisyOracle(market, 0.1, 2, c), schedules, c)
    first, second = result.history[0], result.history[1]
    # round 1 is too coarse: 1 + 0 + 6 * eps_hat >= 9 needs eps_hat >= 4/3
    assert first.eps_hat > 4 / 3 and first.pruned == []
    assert second.eps_hat < 4 / 3
    assert sorted(second.pruned) == [(1, 1), (2, 1)]
    assert result.estimates.status == [Status.ACTIVE, Status.PRUNED, Status.PRUNED]
    assert result.history[2].active == [(0, 1)]
    assert result.total_samples == 3 * 100 + 3 * 1000 + 10_000


def test_eap_without_pruning_matches_repeated_ea():
    rng = np.random.default_rng(1)
    market = Market(random_values(rng, 2, 2))
    c = 11.0
    schedules = Schedules([20, 40, 80], [0.02, 0.02, 0.02], [0, 0, 0])
    result = eap(NoisyOracle(market, 1.0, 7, c), schedules, c)
    replay = NoisyOracle(market, 1.0, 7, c)
    idx = default_index(replay)
    for t, d in zip(schedules.sampling, schedules.failure):
        means, eps_hat = ea(replay, idx, t, d, c)
    assert np.array_equal(result.estimates.mean, means)
    assert result.eps_hat == eps_hat
    assert result.total_samples == len(idx) * 140
    assert all(s is Status.ACTIVE for s in result.estimates.status)


def test_eap_stops_at_target():
    market = _first_price()
    schedules = Schedules([100, 1000, 10_000], [0.03, 0.03, 0.03])
    target = hoeffding_eps(9.1, 3, 0.03, 1000)
    result = eap(NoisyOracle(market, 0.1, 2, 9.1), schedules, 9.1, target_eps=target)
    assert result.iterations_run == 2
    assert result.delta_spent == pytest.approx(0.06)
    assert result.delta_schedule == pytest.approx(0.09)


def test_eap_rejects_negative_target():
    with pytest.raises(DomainError):
        eap(NoisyOracle(_first_price(), 0.1), Schedules([1], [0.1]), 9.1, target_eps=-1)


def _audit(market, result):
    """True when the run stayed inside its radius at every round."""
    truth = market.values
    for record in result.history:
        est = np.array([truth[i, s] for i, s in record.active])
        if np.max(np.abs(record.estimates - est)) > record.eps_hat:
            return False
    return True


def _optimal_pairs(values):
    n, size = values.shape
    m = size.bit_length() - 1
    welfare = {a: sum(values[i, s] for i, s in enumerate(a)) for a in allocations(n, m)}
    top = max(welfare.values())
    return {(i, s) for a, w in welfare.items() if w >= top - 1e-9 for i, s in enumerate(a) if s}


@pytest.mark.parametrize("mode", list(BoundMode))
def test_eap_soundness_and_bookkeeping(mode):
    rng = np.random.default_rng(12)
    pruned_any = 0
    for run in range(20):
        values = random_values(rng, 3, 2)
        market = Market(values)
        c = 11.0
        schedules = Schedules([50, 200, 800], [0.03, 0.03, 0.03])
        result = eap(NoisyOracle(market, 1.0, run, c), schedules, c, bound_mode=mode)
        unpruned = eap(NoisyOracle(market, 1.0, run, c), Schedules([50, 200, 800], [0.03] * 3, [0] * 3), c)
        assert result.total_samples <= unpruned.total_samples
        table = result.estimates
        assert result.total_samples == int(table.samples.sum())
        last_radius = {}
        for record in result.history:
            for pair in record.active:
                last_radius[pair] = record.eps_hat
        for r, pair in enumerate(table.pairs):
            assert table.radius[r] == last_radius[pair]
            if table.status[r] is Status.ACTIVE:
                assert table.radius[r] == result.eps_hat
        pruned = {p for p, st_ in zip(table.pairs, table.status) if st_ is Status.PRUNED}
        pruned_any += bool(pruned)
        if _audit(market, result):
            assert not pruned & _optimal_pairs(values)
    assert pruned_any > 0


def test_eap_budget_limits_pruning_per_round():
    V = gen_unit_demand("preferred-good-distinct", 4, 6, 3)
    c = 11.0
    schedules = Schedules([200, 800, 3200], [0.03] * 3, [2, 2, 2])
    result = eap(NoisyOracle(V, 1.0, 0, c), schedules, c)
    assert all(len(r.pruned) <= 2 for r in result.history)


def test_eap_unit_demand_matches_general_market_path():
    V = gen_unit_demand("preferred-good-distinct", 3, 3, 5)
    c = 11.0
    schedules = Schedules([100, 400, 1600], [0.03] * 3)
    from celearn.valuations import unit_demand_to_market

    unit = eap(NoisyOracle(V, 1.0, 3, c), schedules, c)
    idx = default_index(NoisyOracle(V, 1.0))
    general = eap(NoisyOracle(unit_demand_to_market(V), 1.0, 3, c), schedules, c, idx=idx)
    assert unit.estimates.status == general.estimates.status
    assert np.array_equal(unit.estimates.mean, general.estimates.mean)


def test_learn_result_serializes():
    result = eap(NoisyOracle(_first_price(), 0.1, 2, 9.1), Schedules([1000, 2000], [0.05, 0.05]), 9.1)
    doc = result.to_dict()
    assert doc["iterations_run"] == 2 and doc["pruned_pairs"] == 2
    assert [h["active"] for h in doc["iterations"]] == [3, 1]
    values = result.empirical_values((3, 2))
    assert values[0, 1] == pytest.approx(9.0, abs=0.1)
