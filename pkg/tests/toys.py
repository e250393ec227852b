"""Small hand-built lattices and stage sequences for tests."""

from __future__ import annotations

import numpy as np

from battbid.lattice import LatticeNode, MarkovLattice
from battbid.markets import (
    BidOpening,
    ClearingEvent,
    Horizon,
    Market,
    StageIndex,
    StagePlan,
)


def calendar_lattice(horizon: Horizon, da_day_prices, fcr_day_prices,
                     id_spreads=(0.0,), id_probs=None) -> MarkovLattice:
    """Deterministic single-state lattice on the standard calendar.

    ``da_day_prices`` is (days, 6) in EUR/MWh; ``fcr_day_prices`` is
    (days, 6) in EUR/MW indexed by delivery day.  Intraday levels are the
    day-ahead price plus the given spreads.
    """
    da = np.atleast_2d(np.asarray(da_day_prices, dtype=float))
    fcr = np.atleast_2d(np.asarray(fcr_day_prices, dtype=float))
    spreads = np.sort(np.asarray(id_spreads, dtype=float))
    probs = (np.full(len(spreads), 1.0 / len(spreads)) if id_probs is None
             else np.asarray(id_probs, dtype=float))
    stage_nodes = []
    transitions = []
    for s in horizon.stages:
        d = s.day
        delivery = min(d + 1 if s.block >= 4 else d, horizon.days)
        node = LatticeNode(
            da_state=0, fcr_state=0,
            da_prices=da[d - 1],
            fcr_prices=fcr[delivery - 1],
            id_levels=da[d - 1][:, None] + spreads[None, :],
            id_probs=probs)
        stage_nodes.append([node])
        if s != horizon.last:
            transitions.append(np.array([[1.0]]))
    return MarkovLattice(stage_nodes=stage_nodes, transitions=transitions,
                         initial_distribution=np.array([1.0]))


def sequence_lattice(id_prices_per_stage, id_probs=None) -> MarkovLattice:
    """Single-node lattice over an arbitrary stage sequence, one intraday
    price menu per stage (used with hand-built plans)."""
    stage_nodes = []
    transitions = []
    n = len(id_prices_per_stage)
    for i, levels in enumerate(id_prices_per_stage):
        levels = np.sort(np.atleast_1d(np.asarray(levels, dtype=float)))
        probs = (np.full(len(levels), 1.0 / len(levels)) if id_probs is None
                 else np.asarray(id_probs, dtype=float))
        node = LatticeNode(da_state=0, fcr_state=0,
                           da_prices=np.zeros(6), fcr_prices=np.zeros(6),
                           id_levels=np.tile(levels, (6, 1)), id_probs=probs)
        stage_nodes.append([node])
        if i < n - 1:
            transitions.append(np.array([[1.0]]))
    return MarkovLattice(stage_nodes=stage_nodes, transitions=transitions,
                         initial_distribution=np.array([1.0]))


def two_trade_toy():
    """The deterministic two-trade instance: intraday only, prices 50 then
    100, storage 10/10 starting at 5 with the end level pinned at zero.

    One leading bid-only stage feeds the price-50 trade; the optimum is to
    buy 5 at 50 and sell all 10 at 100, worth 750.
    """
    plans = [
        StagePlan(stage=StageIndex(1, 1), t=1,
                  bids=(BidOpening(Market.ID, 1, (2,)),)),
        StagePlan(stage=StageIndex(1, 2), t=2,
                  bids=(BidOpening(Market.ID, 1, (3,)),),
                  clearings=(ClearingEvent(Market.ID, 1, (2,)),)),
        StagePlan(stage=StageIndex(1, 3), t=3,
                  clearings=(ClearingEvent(Market.ID, 1, (3,)),),
                  terminal=True),
    ]
    lattice = sequence_lattice([[0.0], [50.0], [100.0]])
    return plans, lattice
