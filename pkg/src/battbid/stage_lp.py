"""Per-stage linear programs of the multistage bidding problem.

Each stage problem maximizes the stage's trading revenue plus a
future-value variable bounded by Benders cuts.  The state carried
between stages is:

* ``soc`` -- storage level at the stage boundary (MWh),
* ``bid_<m>[f][n]`` -- pending bid curves per market, delivery block and
  price level (monotone in the level index),
* ``com_da[f]`` / ``com_fcr[f]`` -- committed quantities for the current
  delivery day,
* ``cache_fcr[f]`` -- commitments from the capacity auction for blocks
  4-6 of the next day, parked until that day starts (a new clearing
  would otherwise overwrite them).

Cleared quantities follow the bid-curve step function: a level clears
when its price is at or below the realized price, so the cleared
quantity telescopes to the curve value at the highest cleared level.
Storage bounds are tightened by the symmetric capacity reservation in
both directions and softened by penalized slacks, which keep every
stage problem feasible from any reachable state.

The incoming state enters the LP through the right-hand side; every row
touched by a state coordinate is tagged, and the cut subgradient is
assembled from those rows' duals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RecourseError
from .lattice import MarkovLattice
from .lp import LpProblem, LpStatus, PersistentLp
from .markets import (
    BLOCKS_PER_DAY,
    FCR_CACHE_BLOCKS,
    BatterySpec,
    Market,
    StagePlan,
    TradingOptions,
)


def clearing_indicator(level_price: float, realized_price: float) -> int:
    """1 when a bid at ``level_price`` clears against ``realized_price``."""
    return 1 if level_price <= realized_price else 0


def cleared_level(menu: np.ndarray, realized_price: float) -> int:
    """Highest cleared level (1-based; 0 = nothing clears) of a sorted menu."""
    n = 0
    for price in menu:
        if clearing_indicator(price, realized_price):
            n += 1
        else:
            break
    return n


# ---------------------------------------------------------------------------
# state layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateLayout:
    """Index map of the inter-stage state vector for one configuration."""

    markets: tuple[Market, ...]
    n_da_levels: int
    n_fcr_levels: int
    n_id_levels: int
    slots: tuple[str, ...] = field(default=(), compare=False)
    index: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        slots = ["soc"]
        if Market.DA in self.markets:
            slots += [f"bid_da[{f}][{n}]" for f in range(1, BLOCKS_PER_DAY + 1)
                      for n in range(1, self.n_da_levels + 1)]
        if Market.FCR in self.markets:
            slots += [f"bid_fcr[{f}][{n}]" for f in range(1, BLOCKS_PER_DAY + 1)
                      for n in range(1, self.n_fcr_levels + 1)]
        if Market.ID in self.markets:
            slots += [f"bid_id[{n}]" for n in range(1, self.n_id_levels + 1)]
        if Market.DA in self.markets:
            slots += [f"com_da[{f}]" for f in range(1, BLOCKS_PER_DAY + 1)]
        if Market.FCR in self.markets:
            slots += [f"com_fcr[{f}]" for f in range(1, BLOCKS_PER_DAY + 1)]
            slots += [f"cache_fcr[{f}]" for f in FCR_CACHE_BLOCKS]
        object.__setattr__(self, "slots", tuple(slots))
        object.__setattr__(self, "index", {s: i for i, s in enumerate(slots)})

    @classmethod
    def for_lattice(cls, lattice: MarkovLattice, opts: TradingOptions) -> "StateLayout":
        return cls(markets=opts.markets,
                   n_da_levels=lattice.n_da_levels,
                   n_fcr_levels=lattice.n_fcr_levels,
                   n_id_levels=lattice.n_id_levels)

    @property
    def dim(self) -> int:
        return len(self.slots)

    @property
    def soc(self) -> int:
        return 0

    def bid(self, market: Market, block: int, level: int) -> int:
        if market is Market.ID:
            return self.index[f"bid_id[{level}]"]
        return self.index[f"bid_{market.value}[{block}][{level}]"]

    def com(self, market: Market, block: int) -> int:
        return self.index[f"com_{market.value}[{block}]"]

    def cache(self, block: int) -> int:
        return self.index[f"cache_fcr[{block}]"]

    def levels(self, market: Market) -> int:
        return {Market.DA: self.n_da_levels, Market.FCR: self.n_fcr_levels,
                Market.ID: self.n_id_levels}[market]

    def initial_state(self, battery: BatterySpec) -> np.ndarray:
        s = np.zeros(self.dim)
        s[self.soc] = battery.soc_start_mwh
        return s


# ---------------------------------------------------------------------------
# expressions: outgoing quantities as either an LP variable or a state entry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Expr:
    """Either an LP column (``var >= 0``), an incoming-state entry, or zero."""

    var: int = -1
    state: int = -1

    @property
    def is_var(self) -> bool:
        return self.var >= 0

    @property
    def is_state(self) -> bool:
        return self.state >= 0


_ZERO = _Expr()


# ---------------------------------------------------------------------------
# the compiled stage template
# ---------------------------------------------------------------------------

@dataclass
class StageTemplate:
    """LP skeleton for one (stage, node, intraday level) triple.

    The incoming state enters only through the right-hand side;
    ``rhs_entries`` lists ``(row, state_index, coefficient)`` triples so a
    concrete LP is the template plus ``b[row] += coef * state[idx]``.
    """

    t: int
    node_index: int
    id_level: int
    plan: StagePlan
    layout: StateLayout
    # variables
    names: list[str]
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    # base rows
    rows: list[dict]
    rels: list[int]               # -1 '<=', 0 '=', +1 '>='
    base_rhs: np.ndarray
    rhs_entries: list[tuple[int, int, float]]
    # outgoing state maps
    out_var: list[tuple[int, int]]     # (slot, var)
    out_state: list[tuple[int, int]]   # (slot, incoming slot)
    # bookkeeping
    clearings: list[dict]              # market, block, var, price, delivery_day
    theta_var: int | None
    soc_var: int
    slack_vars: tuple[int, int]
    id_clear_var: int | None
    com_da_block: _Expr
    row_tags: list[object]

    def n_vars(self) -> int:
        return len(self.names)

    def rhs_for(self, state: np.ndarray) -> np.ndarray:
        b = self.base_rhs.copy()
        for row, idx, coef in self.rhs_entries:
            b[row] += coef * state[idx]
        return b

    def materialize(self, state: np.ndarray,
                    cuts: list[tuple[float, np.ndarray]] = ()) -> LpProblem:
        """Standalone, inspectable LP for the given incoming state.

        Rows that depend on the incoming state carry their tag so duals
        can be pulled per state coordinate.
        """
        lp = LpProblem(f"stage{self.t}-node{self.node_index}-w{self.id_level}")
        for name, lo, up, c in zip(self.names, self.lower, self.upper, self.objective):
            lp.add_variable(name, lo, up, c)
        rhs = self.rhs_for(state)
        rel_name = {-1: "<=", 0: "=", 1: ">="}
        for i, (coeffs, rel) in enumerate(zip(self.rows, self.rels)):
            lp.add_constraint(coeffs, rel_name[rel], rhs[i], tag=self.row_tags[i])
        for j, (alpha, beta) in enumerate(cuts):
            coeffs, rhs_val = self.cut_row(alpha, beta, state)
            lp.add_constraint(coeffs, "<=", rhs_val, tag=("cut", j))
        return lp

    def cut_row(self, alpha: float, beta: np.ndarray, state: np.ndarray
                ) -> tuple[dict, float]:
        """Row ``theta - beta . outgoing_state <= alpha`` with constant
        outgoing slots folded into the right-hand side."""
        coeffs = {self.theta_var: 1.0}
        for slot, var in self.out_var:
            if beta[slot] != 0.0:
                coeffs[var] = coeffs.get(var, 0.0) - beta[slot]
        rhs = alpha
        for slot, src in self.out_state:
            rhs += beta[slot] * state[src]
        return coeffs, rhs

    def cut_rhs_entries(self, row: int, beta: np.ndarray) -> list[tuple[int, int, float]]:
        return [(row, src, beta[slot]) for slot, src in self.out_state
                if beta[slot] != 0.0]

    def cut_coeff_vector(self, beta: np.ndarray) -> np.ndarray:
        a = np.zeros(self.n_vars())
        a[self.theta_var] = 1.0
        for slot, var in self.out_var:
            a[var] -= beta[slot]
        return a

    def transfer(self, state: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Outgoing state from the solved stage: exact copies for carried
        slots, solver values for decision-driven slots, and a recomputed
        storage balance so conservation holds to floating-point accuracy."""
        out = np.zeros(self.layout.dim)
        for slot, src in self.out_state:
            out[slot] = state[src]
        for slot, var in self.out_var:
            out[slot] = values[var]
        delivered = 0.0
        if self.id_clear_var is not None:
            delivered += values[self.id_clear_var]
        if self.com_da_block.is_var:
            delivered += values[self.com_da_block.var]
        elif self.com_da_block.is_state:
            delivered += state[self.com_da_block.state]
        out[self.layout.soc] = state[self.layout.soc] - delivered
        return out


def build_stage_template(plan: StagePlan, layout: StateLayout,
                         lattice: MarkovLattice, node_index: int, id_level: int,
                         battery: BatterySpec, opts: TradingOptions,
                         theta_ub: float | None) -> StageTemplate:
    """Compile the LP skeleton for one (stage, node, intraday level)."""
    t = plan.t
    node = lattice.nodes(t)[node_index]
    L = battery.rated_power_mw
    Q = battery.capacity_mwh
    rho = opts.penalty(battery)

    names: list[str] = []
    lower: list[float] = []
    upper: list[float] = []
    objective: list[float] = []

    def add_var(name, lo, up, obj=0.0) -> int:
        names.append(name)
        lower.append(lo)
        upper.append(up)
        objective.append(obj)
        return len(names) - 1

    # --- decision variables -------------------------------------------------
    bid_vars: dict[tuple[Market, int, int], int] = {}
    for bid in plan.bids:
        for f in bid.blocks:
            for n in range(1, layout.levels(bid.market) + 1):
                if bid.market is Market.FCR:
                    lo, up = 0.0, 0.5 * L
                else:
                    lo, up = -L, L
                name = (f"x_id[{n}]" if bid.market is Market.ID
                        else f"x_{bid.market.value}[{f}][{n}]")
                bid_vars[(bid.market, f, n)] = add_var(name, lo, up)

    clear_vars: dict[tuple[Market, int], int] = {}
    clearings: list[dict] = []
    for ev in plan.clearings:
        for f in ev.blocks:
            if ev.market is Market.ID:
                price = float(node.id_levels[f - 1][id_level])
            elif ev.market is Market.DA:
                price = float(node.da_prices[f - 1])
            else:
                price = float(node.fcr_prices[f - 1]) * opts.fcr_price_scale
            v = add_var(f"y_{ev.market.value}[{f}]", -L, L, obj=price)
            clear_vars[(ev.market, f)] = v
            clearings.append({"market": ev.market, "block": f, "var": v,
                              "price": price, "delivery_day": ev.delivery_day})

    soc_var = add_var("soc", -np.inf, np.inf)
    s_plus = add_var("slack_hi", 0.0, np.inf, obj=-rho)
    s_minus = add_var("slack_lo", 0.0, np.inf, obj=-rho)
    theta_var = None
    if not plan.terminal:
        if theta_ub is None:
            raise ConfigError("non-terminal stage needs a future-value bound")
        theta_var = add_var("theta", -np.inf, theta_ub, obj=1.0)

    # --- rows -----------------------------------------------------------------
    rows: list[dict] = []
    rels: list[int] = []
    base_rhs: list[float] = []
    rhs_entries: list[tuple[int, int, float]] = []
    row_tags: list[object] = []

    def add_row(coeffs: dict, rel: int, rhs: float, tag=None,
                state_terms: list[tuple[int, float]] = ()) -> int:
        rows.append(coeffs)
        rels.append(rel)
        base_rhs.append(rhs)
        row = len(rows) - 1
        for idx, coef in state_terms:
            rhs_entries.append((row, idx, coef))
        row_tags.append(tag if tag is not None
                        else ("state", row) if state_terms else None)
        return row

    # clearing: cleared quantity equals the pending curve at the highest
    # cleared level; an empty cleared set forces zero
    for info in clearings:
        m, f, v = info["market"], info["block"], info["var"]
        if m is Market.ID:
            menu = node.id_levels[f - 1]
            realized = menu[id_level]
        else:
            menu = lattice.menu(t, m.value)[f - 1]
            realized = info["price"] if m is Market.DA else \
                float(node.fcr_prices[f - 1])
        n_star = cleared_level(menu, realized)
        info["n_star"] = n_star
        if n_star == 0:
            add_row({v: 1.0}, 0, 0.0, tag=("clear", m.value, f))
        else:
            add_row({v: 1.0}, 0, 0.0, tag=("clear", m.value, f),
                    state_terms=[(layout.bid(m, f, n_star), 1.0)])

    # committed quantities in effect after this stage, per market and block
    def com_expr(market: Market, f: int) -> _Expr:
        if not opts.has(market):
            return _ZERO
        ev = plan.clearing_for(market)
        if market is Market.DA:
            if ev is not None and f in ev.blocks:
                return _Expr(var=clear_vars[(Market.DA, f)])
            return _Expr(state=layout.com(Market.DA, f))
        if ev is not None and f in ev.blocks and f not in FCR_CACHE_BLOCKS:
            return _Expr(var=clear_vars[(Market.FCR, f)])
        if plan.fcr_release and f in FCR_CACHE_BLOCKS:
            return _Expr(state=layout.cache(f))
        return _Expr(state=layout.com(Market.FCR, f))

    def cache_expr(f: int) -> _Expr:
        if not opts.has(Market.FCR):
            return _ZERO
        ev = plan.clearing_for(Market.FCR)
        if ev is not None and f in ev.blocks:
            return _Expr(var=clear_vars[(Market.FCR, f)])
        return _Expr(state=layout.cache(f))

    def expr_terms(e: _Expr, coef: float, coeffs: dict,
                   state_terms: list[tuple[int, float]]) -> None:
        """Add ``coef * expr`` to the row's left side."""
        if e.is_var:
            coeffs[e.var] = coeffs.get(e.var, 0.0) + coef
        elif e.is_state:
            # a state constant on the left moves to the right-hand side
            state_terms.append((e.state, -coef))

    block = plan.stage.block
    com_da_now = com_expr(Market.DA, block)
    com_fcr_now = com_expr(Market.FCR, block)

    # storage balance: soc_out = soc_in - (cleared intraday + committed DA)
    coeffs = {soc_var: 1.0}
    terms: list[tuple[int, float]] = [(layout.soc, 1.0)]
    id_clear_var = clear_vars.get((Market.ID, block))
    if id_clear_var is not None:
        coeffs[id_clear_var] = 1.0
    expr_terms(com_da_now, 1.0, coeffs, terms)
    add_row(coeffs, 0, 0.0, tag="soc_balance", state_terms=terms)

    # reservation-tightened storage bounds, slack-relaxed
    coeffs = {soc_var: 1.0, s_minus: 1.0}
    terms = []
    expr_terms(com_fcr_now, -1.0, coeffs, terms)
    add_row(coeffs, 1, 0.0, tag="soc_lower", state_terms=terms)
    coeffs = {soc_var: 1.0, s_plus: -1.0}
    terms = []
    expr_terms(com_fcr_now, 1.0, coeffs, terms)
    add_row(coeffs, -1, Q, tag="soc_upper", state_terms=terms)

    if plan.terminal:
        target = battery.soc_end_target
        add_row({soc_var: 1.0, s_minus: 1.0}, 1, target, tag="terminal_lower")
        add_row({soc_var: 1.0, s_plus: -1.0}, -1, target, tag="terminal_upper")

    # monotone bid curves
    for bid in plan.bids:
        for f in bid.blocks:
            for n in range(2, layout.levels(bid.market) + 1):
                add_row({bid_vars[(bid.market, f, n)]: 1.0,
                         bid_vars[(bid.market, f, n - 1)]: -1.0}, 1, 0.0,
                        tag=("monotone", bid.market.value, f, n))

    # intraday storage-consistency bounds on the newly placed curve
    id_bid = plan.bid_for(Market.ID)
    if id_bid is not None and opts.id_constraints:
        f_next = id_bid.blocks[0]
        n_top = layout.n_id_levels
        top_var = bid_vars[(Market.ID, f_next, n_top)]
        bot_var = bid_vars[(Market.ID, f_next, 1)]
        com_fcr_next = com_expr(Market.FCR, f_next)
        if plan.id_rest and opts.has(Market.DA):
            da_top: _Expr = _Expr(state=layout.bid(Market.DA, f_next, layout.n_da_levels))
            da_bot: _Expr = _Expr(state=layout.bid(Market.DA, f_next, 1))
            da_bid = plan.bid_for(Market.DA)
            if da_bid is not None and f_next in da_bid.blocks:
                da_top = _Expr(var=bid_vars[(Market.DA, f_next, layout.n_da_levels)])
                da_bot = _Expr(var=bid_vars[(Market.DA, f_next, 1)])
        else:
            da_top = da_bot = com_expr(Market.DA, f_next)

        # the stage slacks also relax these rows: from a state whose
        # commitments already exceed the stored energy the literal bounds
        # would push the whole curve below its domain and the stage would
        # lose recourse; with zero slack the rows bind exactly as stated
        coeffs = {top_var: 1.0, soc_var: -1.0, s_plus: -1.0}
        terms = []
        expr_terms(com_fcr_next, 1.0, coeffs, terms)
        expr_terms(da_top, 1.0, coeffs, terms)
        add_row(coeffs, -1, 0.0, tag="id_upper", state_terms=terms)

        coeffs = {bot_var: 1.0, soc_var: -1.0, s_minus: 1.0}
        terms = []
        expr_terms(com_fcr_next, 1.0, coeffs, terms)
        expr_terms(da_bot, 1.0, coeffs, terms)
        add_row(coeffs, 1, -Q, tag="id_lower", state_terms=terms)

    # --- outgoing state maps -----------------------------------------------------
    out_var: list[tuple[int, int]] = []
    out_state: list[tuple[int, int]] = []

    for m in (Market.DA, Market.FCR, Market.ID):
        if not opts.has(m):
            continue
        bid = plan.bid_for(m)
        cleared = plan.clearing_for(m)
        blocks = range(1, BLOCKS_PER_DAY + 1) if m is not Market.ID else (None,)
        for f in blocks:
            for n in range(1, layout.levels(m) + 1):
                slot = layout.bid(m, f if f is not None else 0, n)
                if bid is not None and (m is Market.ID or f in bid.blocks):
                    out_var.append((slot, bid_vars[(m, f if f is not None
                                                    else bid.blocks[0], n)]))
                elif cleared is not None and (m is Market.ID or f in cleared.blocks):
                    pass  # consumed by the clearing; slot resets to zero
                else:
                    out_state.append((slot, slot))

    for m in (Market.DA, Market.FCR):
        if not opts.has(m):
            continue
        for f in range(1, BLOCKS_PER_DAY + 1):
            e = com_expr(m, f)
            slot = layout.com(m, f)
            if e.is_var:
                out_var.append((slot, e.var))
            elif e.is_state:
                out_state.append((slot, e.state))
    if opts.has(Market.FCR):
        for f in FCR_CACHE_BLOCKS:
            e = cache_expr(f)
            slot = layout.cache(f)
            if e.is_var:
                out_var.append((slot, e.var))
            elif e.is_state:
                out_state.append((slot, e.state))

    out_var.append((layout.soc, soc_var))

    return StageTemplate(
        t=t, node_index=node_index, id_level=id_level, plan=plan, layout=layout,
        names=names, lower=np.array(lower), upper=np.array(upper),
        objective=np.array(objective), rows=rows, rels=rels,
        base_rhs=np.array(base_rhs), rhs_entries=rhs_entries,
        out_var=out_var, out_state=out_state, clearings=clearings,
        theta_var=theta_var, soc_var=soc_var, slack_vars=(s_plus, s_minus),
        id_clear_var=id_clear_var, com_da_block=com_da_now, row_tags=row_tags)


def build_stage_lp(plan: StagePlan, layout: StateLayout, lattice: MarkovLattice,
                   node_index: int, id_level: int, battery: BatterySpec,
                   opts: TradingOptions, incoming: np.ndarray,
                   theta_ub: float | None = None,
                   cuts: list[tuple[float, np.ndarray]] = ()) -> LpProblem:
    """One-off stage LP for inspection and tests."""
    tpl = build_stage_template(plan, layout, lattice, node_index, id_level,
                               battery, opts, theta_ub)
    return tpl.materialize(incoming, cuts)


# ---------------------------------------------------------------------------
# the engine-facing solver wrapper
# ---------------------------------------------------------------------------

@dataclass
class StageOutcome:
    objective: float
    stage_revenue: float
    revenue_by_market: dict
    cleared: list[dict]
    slack_mwh: float
    state_out: np.ndarray
    state_duals: np.ndarray | None
    values: np.ndarray
    theta: float
    cut_duals: np.ndarray | None = None


class StageSolver:
    """Persistent LP for one template; re-solved per incoming state.

    Cut rows are appended on demand from the shared per-(stage, node)
    cut list, so all intraday-level variants of a node see the same
    future-value approximation.
    """

    def __init__(self, template: StageTemplate):
        self.tpl = template
        m = len(template.rows)
        A = np.zeros((m, template.n_vars()))
        for i, coeffs in enumerate(template.rows):
            for col, coef in coeffs.items():
                A[i, col] += coef
        self._plp = PersistentLp(template.objective, A, np.array(template.rels),
                                 template.base_rhs, template.lower, template.upper)
        self._rhs_entries = list(template.rhs_entries)
        self._base_rhs = template.base_rhs.copy()
        self._n_base_rows = m
        self._n_cuts = 0
        # establish a basis on the small cut-free problem; appended cut rows
        # then extend it dual-feasibly, so later solves restore feasibility
        # with a few dual pivots instead of a cold phase-1 on the full system
        self._plp.set_rhs(self.tpl.rhs_for(np.zeros(template.layout.dim)))
        self._plp.solve()

    def sync_cuts(self, cuts: list[tuple[float, np.ndarray]]) -> None:
        while self._n_cuts < len(cuts):
            alpha, beta = cuts[self._n_cuts]
            a = self.tpl.cut_coeff_vector(beta)
            self._plp.add_rows(a[None, :], [-1], [alpha])
            row = len(self._base_rhs)
            self._base_rhs = np.append(self._base_rhs, alpha)
            self._rhs_entries.extend(self.tpl.cut_rhs_entries(row, beta))
            self._n_cuts += 1

    def solve(self, state: np.ndarray, need_duals: bool) -> StageOutcome:
        b = self._base_rhs.copy()
        for row, idx, coef in self._rhs_entries:
            b[row] += coef * state[idx]
        self._plp.set_rhs(b)
        status, x, duals, _ = self._plp.solve()
        if status is not LpStatus.OPTIMAL:
            raise RecourseError(
                f"stage {self.tpl.t} node {self.tpl.node_index} LP is {status.value} "
                "although slack variables are present")
        tpl = self.tpl
        theta = float(x[tpl.theta_var]) if tpl.theta_var is not None else 0.0
        s_plus, s_minus = tpl.slack_vars
        slack = float(x[s_plus] + x[s_minus])
        revenue_by_market: dict = {}
        cleared = []
        for info in tpl.clearings:
            q = float(x[info["var"]])
            r = info["price"] * q
            revenue_by_market[info["market"]] = revenue_by_market.get(info["market"], 0.0) + r
            cleared.append({"market": info["market"], "block": info["block"],
                            "delivery_day": info["delivery_day"],
                            "price": info["price"], "quantity": q})
        rho_cost = float(tpl.objective[s_plus]) * float(x[s_plus]) + \
            float(tpl.objective[s_minus]) * float(x[s_minus])
        stage_revenue = sum(revenue_by_market.values()) + rho_cost
        state_duals = None
        if need_duals:
            lam = np.zeros(tpl.layout.dim)
            for row, idx, coef in self._rhs_entries:
                lam[idx] += duals[row] * coef
            state_duals = lam
        return StageOutcome(
            objective=float(tpl.objective @ x), stage_revenue=stage_revenue,
            revenue_by_market=revenue_by_market, cleared=cleared, slack_mwh=slack,
            state_out=tpl.transfer(state, x), state_duals=state_duals,
            values=x, theta=theta, cut_duals=duals[self._n_base_rows:])
