"""The reference solver must reproduce every hand-solved instance before
it is trusted as the referee for trained policies."""

import numpy as np
import pytest
from toys import calendar_lattice, two_trade_toy
from tree_oracle import optimal_value

from battbid.lattice import LatticeNode, MarkovLattice
from battbid.markets import (
    BatterySpec,
    Market,
    TradingOptions,
    build_horizon,
    build_stage_plans,
)


def test_oracle_two_trade_toy():
    plans, lat = two_trade_toy()
    battery = BatterySpec(10, 10, 5, soc_end_mwh=0.0)
    value = optimal_value(lat, plans, battery, TradingOptions(markets=(Market.ID,)))
    assert value == pytest.approx(750.0, abs=1e-6)


def test_oracle_fcr_constant():
    horizon = build_horizon(2)
    opts = TradingOptions(markets=(Market.FCR,))
    plans = build_stage_plans(horizon, opts)
    lat = calendar_lattice(horizon, np.zeros((2, 6)), np.full((2, 6), 20.0))
    value = optimal_value(lat, plans, BatterySpec(10, 10, 5), opts)
    assert value == pytest.approx(600.0, abs=1e-6)


def test_oracle_da_alternating():
    horizon = build_horizon(2)
    opts = TradingOptions(markets=(Market.DA,))
    plans = build_stage_plans(horizon, opts)
    day2 = np.array([20.0, 120.0, 20.0, 120.0, 20.0, 120.0])
    lat = calendar_lattice(horizon, np.vstack([np.zeros(6), day2]), np.zeros((2, 6)))
    value = optimal_value(lat, plans, BatterySpec(10, 10, 5), opts)
    assert value == pytest.approx(2500.0, abs=1e-6)


def test_oracle_stochastic_fcr():
    horizon = build_horizon(2)
    opts = TradingOptions(markets=(Market.FCR,))
    plans = build_stage_plans(horizon, opts)
    stage_nodes = []
    transitions = []
    for s in horizon.stages:
        nodes = [LatticeNode(da_state=0, fcr_state=g, da_prices=np.zeros(6),
                             fcr_prices=np.full(6, price),
                             id_levels=np.zeros((6, 1)), id_probs=np.array([1.0]))
                 for g, price in enumerate((10.0, 30.0))]
        stage_nodes.append(nodes)
        if s != horizon.stages[-1]:
            nxt = s.next()
            transitions.append(np.full((2, 2), 0.5) if nxt.block == 4 else np.eye(2))
    lat = MarkovLattice(stage_nodes=stage_nodes, transitions=transitions,
                        initial_distribution=np.array([0.5, 0.5]))
    value = optimal_value(lat, plans, BatterySpec(10, 10, 5), opts)
    assert value == pytest.approx(600.0, abs=1e-6)


def test_oracle_fcr_scale_halves_capacity_revenue():
    horizon = build_horizon(2)
    opts = TradingOptions(markets=(Market.FCR,), fcr_price_scale=0.5)
    plans = build_stage_plans(horizon, opts)
    lat = calendar_lattice(horizon, np.zeros((2, 6)), np.full((2, 6), 20.0))
    value = optimal_value(lat, plans, BatterySpec(10, 10, 5), opts)
    assert value == pytest.approx(300.0, abs=1e-6)


def test_oracle_id_two_levels_matches_closed_form():
    # one trading day of intraday only, spread +/-10 around 100 with equal
    # probability; at every stage the curve can sell into the high draw and
    # buy back at the low one, subject to storage limits
    horizon = build_horizon(2)
    opts = TradingOptions(markets=(Market.ID,))
    plans = build_stage_plans(horizon, opts)
    lat = calendar_lattice(horizon, np.full((2, 6), 100.0), np.zeros((2, 6)),
                           id_spreads=(-10.0, 10.0))
    battery = BatterySpec(10, 10, 5)
    value = optimal_value(lat, plans, battery, opts)
    # trained value must agree; this pins the oracle and engine together
    from battbid.sddp import TrainConfig, train

    cfg = TrainConfig(max_iterations=250, initial_iterations=60, stall_window=30,
                      stall_abs_improvement=1e-6, seed=5)
    policy = train(lat, plans, battery, opts, cfg)
    assert policy.upper_bound == pytest.approx(value, rel=2e-3)
    assert policy.upper_bound >= value - 1e-6
