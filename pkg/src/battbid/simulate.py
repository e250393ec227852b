"""Policy simulation and the revenue/volume/balance accounting.

A simulation run samples one node path and intraday draws, solves the
stage problems under the frozen cuts, and records delivered quantities
per market and stage.  Revenue is attributed to delivery stages, so
"the last two days" of a three-day horizon include the capacity
revenue cleared the previous afternoon.  The default reporting window
skips the first day, whose only possible actions are intraday trades.

Two arbitrage metrics quantify cross-market coordination over the
window.  The direction metric sums, per stage, the smaller of the
day-ahead and intraday quantities when they point in opposite
directions (that much volume never touches the battery).  The
feasibility metric sums the storage-bound overruns created by day-ahead
plus reserve positions that intraday trades must absorb.  Both are
ratios of sums; the literal denominator adds signed quantities and can
vanish, so an absolute-volume variant is reported alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .lattice import MarkovLattice
from .markets import BatterySpec, Market, StagePlan, TradingOptions
from .sddp import Policy, SddpModel, TrainConfig, train

COMBO_ORDER = (
    (Market.FCR,),
    (Market.ID,),
    (Market.DA,),
    (Market.FCR, Market.DA),
    (Market.ID, Market.FCR),
    (Market.ID, Market.DA),
    (Market.FCR, Market.ID, Market.DA),
)


def combo_name(markets: tuple[Market, ...]) -> str:
    return "_".join(m.value for m in markets)


@dataclass
class SimRun:
    nodes: list[int]
    draws: list[int]
    soc: np.ndarray            # length T+1: start level plus one per stage
    slack: np.ndarray          # length T
    quantity: dict             # Market -> length-T delivered quantities
    price: dict                # Market -> length-T prices at delivery
    revenue_total: float = 0.0


@dataclass
class SimBatch:
    runs: list[SimRun]
    battery: BatterySpec
    opts: TradingOptions
    plans: list[StagePlan]
    skip_days: int
    n_lp_solves: int = 0

    @property
    def window(self) -> np.ndarray:
        return np.array([p.stage.day > self.skip_days for p in self.plans])

    def penalty_rate(self) -> float:
        return self.opts.penalty(self.battery)

    # -- per-run accounting ---------------------------------------------------

    def run_revenue(self, run: SimRun, market: Market) -> float:
        w = self.window
        return float(np.sum(run.quantity[market][w] * run.price[market][w]))

    def run_penalty(self, run: SimRun) -> float:
        return float(self.penalty_rate() * np.sum(run.slack[self.window]))

    def run_total(self, run: SimRun) -> float:
        rev = sum(self.run_revenue(run, m) for m in self.opts.markets)
        return rev - self.run_penalty(run)

    def run_volume(self, run: SimRun, market: Market) -> float:
        w = self.window
        q = run.quantity[market][w]
        return float(np.sum(q) if market is Market.FCR else np.sum(np.abs(q)))

    def run_balance(self, run: SimRun, market: Market) -> float:
        """Net energy bought into storage through this market."""
        return float(-np.sum(run.quantity[market][self.window]))

    # -- batch aggregates --------------------------------------------------------

    def mean(self, fn, *args) -> float:
        return float(np.mean([fn(run, *args) for run in self.runs]))

    def revenue_samples(self) -> np.ndarray:
        return np.array([self.run_total(run) for run in self.runs])

    def soc_matrix(self) -> np.ndarray:
        return np.vstack([run.soc for run in self.runs])

    def total_slack(self) -> float:
        return float(sum(np.sum(run.slack) for run in self.runs))

    def table_row(self) -> dict:
        """The per-configuration column of the market-comparison table."""
        out: dict = {}
        for m in (Market.DA, Market.ID, Market.FCR):
            if m not in self.opts.markets:
                continue
            key = m.value
            out[f"{key}_revenue_eur"] = self.mean(self.run_revenue, m)
            out[f"{key}_volume"] = self.mean(self.run_volume, m)
            if m is not Market.FCR:
                out[f"{key}_balance_mwh"] = self.mean(self.run_balance, m)
        out["penalty_eur"] = self.mean(self.run_penalty)
        out["total_revenue_eur"] = self.mean(self.run_total)
        out["total_volume"] = sum(
            self.mean(self.run_volume, m) for m in self.opts.markets)
        return out


def simulate(policy: Policy, lattice: MarkovLattice, plans: list[StagePlan],
             battery: BatterySpec, opts: TradingOptions, n_runs: int = 10_000,
             seed: int = 0, skip_days: int = 1,
             lattice_checksum: str | None = None,
             allow_lattice_mismatch: bool = False) -> SimBatch:
    """Run the frozen policy over freshly sampled paths.

    Per-run random streams derive from ``(seed, run index)``, so results
    do not depend on execution order.
    """
    if (policy.lattice_checksum is not None and lattice_checksum is not None
            and policy.lattice_checksum != lattice_checksum
            and not allow_lattice_mismatch):
        raise DataError("policy was trained on a different lattice "
                        "(checksum mismatch); pass allow_lattice_mismatch "
                        "to evaluate out of sample")
    if policy.markets != opts.markets:
        raise DataError("policy was trained for markets "
                        f"{[m.value for m in policy.markets]}, asked to simulate "
                        f"{[m.value for m in opts.markets]}")
    model = SddpModel(lattice, plans, battery, opts, cuts=policy.cuts)
    T = model.T
    runs = []
    for r in range(n_runs):
        rng = np.random.default_rng([seed, r])
        nodes, draws = model.sample_path(rng)
        states, _, _, outcomes = model.run_forward(nodes, draws, collect=True)
        quantity = {m: np.zeros(T) for m in opts.markets}
        price = {m: np.zeros(T) for m in opts.markets}
        for out in outcomes:
            for rec in out.cleared:
                t_star = (rec["delivery_day"] - 1) * 6 + rec["block"]
                if t_star <= T:
                    quantity[rec["market"]][t_star - 1] += rec["quantity"]
                    price[rec["market"]][t_star - 1] = rec["price"]
        # delivered reserve capacity per stage (clearing records carry the
        # same numbers, but the committed quantities make the stage-wise
        # reservation explicit for the feasibility metric)
        soc = np.array([s[model.layout.soc] for s in states])
        slack = np.array([out.slack_mwh for out in outcomes])
        run = SimRun(nodes=nodes, draws=draws, soc=soc, slack=slack,
                     quantity=quantity, price=price)
        runs.append(run)
    batch = SimBatch(runs=runs, battery=battery, opts=opts, plans=plans,
                     skip_days=skip_days, n_lp_solves=model.n_lp_solves)
    for run in runs:
        run.revenue_total = batch.run_total(run)
    return batch


# ---------------------------------------------------------------------------
# arbitrage metrics
# ---------------------------------------------------------------------------

def direction_metric(batch: SimBatch) -> dict:
    """Share of opposing day-ahead/intraday volume that nets out."""
    if Market.DA not in batch.opts.markets or Market.ID not in batch.opts.markets:
        return {"literal": None, "absolute": None}
    w = batch.window
    num = 0.0
    den_lit = 0.0
    den_abs = 0.0
    for run in batch.runs:
        qda = run.quantity[Market.DA][w]
        qid = run.quantity[Market.ID][w]
        opposing = qda * qid < 0
        num += float(np.sum(np.minimum(np.abs(qda), np.abs(qid))[opposing]))
        den_lit += float(np.sum(qda + qid))
        den_abs += float(np.sum(np.abs(qda) + np.abs(qid)))
    return {"literal": (num / den_lit if abs(den_lit) > 1e-9 else None),
            "absolute": (num / den_abs if den_abs > 1e-9 else None)}


def feasibility_metric(batch: SimBatch) -> dict:
    """Storage-bound overruns from day-ahead plus reserve positions."""
    if Market.DA not in batch.opts.markets or Market.ID not in batch.opts.markets:
        return {"literal": None, "absolute": None}
    w = batch.window
    L = batch.battery.rated_power_mw
    num = 0.0
    den_lit = 0.0
    den_abs = 0.0
    for run in batch.runs:
        qda = run.quantity[Market.DA][w]
        qid = run.quantity[Market.ID][w]
        qfcr = (run.quantity[Market.FCR][w] if Market.FCR in batch.opts.markets
                else np.zeros(int(w.sum())))
        soc_in = run.soc[:-1][w]
        over = qda + qfcr - soc_in
        under = L + qda - qfcr - soc_in
        y2 = np.where(over > 0, over, np.where(under < 0, np.abs(under), 0.0))
        num += float(np.sum(y2))
        den_lit += float(np.sum(qda + qid))
        den_abs += float(np.sum(np.abs(qda) + np.abs(qid)))
    return {"literal": (num / den_lit if abs(den_lit) > 1e-9 else None),
            "absolute": (num / den_abs if den_abs > 1e-9 else None)}


# ---------------------------------------------------------------------------
# market-combination study
# ---------------------------------------------------------------------------

@dataclass
class ComboResult:
    markets: tuple[Market, ...]
    policy: Policy
    batch: SimBatch

    @property
    def name(self) -> str:
        return combo_name(self.markets)


def market_combination_sweep(lattice: MarkovLattice, horizon_plans_builder,
                             battery: BatterySpec, base_opts: TradingOptions,
                             cfg: TrainConfig, n_runs: int, sim_seed: int,
                             skip_days: int = 1,
                             combos: tuple = COMBO_ORDER,
                             progress=None) -> list[ComboResult]:
    """Train and simulate one policy per market combination.

    ``horizon_plans_builder`` maps a TradingOptions to the stage plans (the
    calendar depends on which markets are open).
    """
    results = []
    for markets in combos:
        opts = TradingOptions(markets=markets,
                              id_constraints=base_opts.id_constraints,
                              penalty_eur_mwh=base_opts.penalty_eur_mwh,
                              fcr_price_scale=base_opts.fcr_price_scale)
        plans = horizon_plans_builder(opts)
        policy = train(lattice, plans, battery, opts, cfg, progress=progress)
        batch = simulate(policy, lattice, plans, battery, opts,
                         n_runs=n_runs, seed=sim_seed, skip_days=skip_days)
        results.append(ComboResult(markets=markets, policy=policy, batch=batch))
    return results


TABLE_ROWS = (
    "da_revenue_eur", "da_volume", "da_balance_mwh",
    "id_revenue_eur", "id_volume", "id_balance_mwh",
    "fcr_revenue_eur", "fcr_volume",
    "penalty_eur", "total_revenue_eur", "total_volume",
)


def comparison_table(results: list[ComboResult]) -> tuple[list[str], list[list]]:
    """Rows x combination-columns grid of the market study."""
    header = ["metric"] + [r.name for r in results]
    cells = []
    columns = [r.batch.table_row() for r in results]
    for row_key in TABLE_ROWS:
        row = [row_key]
        for col in columns:
            row.append(col.get(row_key, ""))
        cells.append(row)
    return header, cells
