"""Policy training by stochastic dual dynamic programming.

Each iteration runs one forward pass (sampling a node path and intraday
draws, solving the stage problems under the current cuts) and one
backward pass (re-solving all child realizations at the visited states
and adding one expectation-weighted Benders cut per visited stage-node).
Because the objective is maximized, the cuts approximate the future
value from above and the first-stage objective is a deterministic upper
bound that can only tighten as cuts accumulate.

Training stops at the iteration cap, or once the bound has improved by
less than a configured absolute amount over a trailing window after an
initial warm-up -- with the shipped defaults: less than 0.1 over the
last 3000 iterations, checked only after the first 5000.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .lattice import MarkovLattice
from .markets import BatterySpec, Market, StagePlan, TradingOptions
from .stage_lp import StageSolver, StateLayout, build_stage_template

POLICY_FORMAT = "battbid-policy"
POLICY_VERSION = 1

BOUND_MONOTONE_TOL = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 18_000
    initial_iterations: int = 5_000
    stall_window: int = 3_000
    stall_abs_improvement: float = 0.1
    seed: int = 0
    forward_passes_per_iteration: int = 1
    cut_cap: int | None = None
    cut_inactive_window: int = 2_000

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.stall_window < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.stall_window > self.max_iterations:
            raise ConfigError("stall_window cannot exceed max_iterations")
        if self.forward_passes_per_iteration < 1:
            raise ConfigError("forward_passes_per_iteration must be >= 1")


@dataclass
class Cut:
    intercept: float
    gradient: np.ndarray
    iteration: int
    last_active: int = 0


@dataclass
class TrainProgress:
    iteration: int
    upper_bound: float
    forward_value: float
    slack_mwh: float


@dataclass
class Policy:
    """Trained future-value approximation plus training metadata."""

    markets: tuple[Market, ...]
    layout: StateLayout
    cuts: list[list[list[Cut]]]          # [stage-1][node] -> cuts
    theta_ubs: list[float]
    bound_history: np.ndarray            # columns: iteration, bound, forward, slack
    iterations: int
    stop_reason: str
    seed: int
    config_hash: str | None = None
    lattice_checksum: str | None = None
    n_lp_solves: int = 0
    n_unique_node_paths: int = 0

    @property
    def upper_bound(self) -> float:
        return float(self.bound_history[-1, 1])

    def final_forward_mean(self, window: int | None = None) -> float:
        """Mean forward-pass value near the end of training; the default
        window is the trailing quarter (capped at 100 iterations) so the
        warm-up does not contaminate the estimate."""
        n = len(self.bound_history)
        w = max(1, min(100, n // 4)) if window is None else min(window, n)
        return float(self.bound_history[-w:, 2].mean())

    def gap(self, window: int | None = None) -> float:
        b = self.upper_bound
        return (b - self.final_forward_mean(window)) / abs(b) if b else 0.0


class SddpModel:
    """Stage solvers, shared cut lists and sampling utilities."""

    def __init__(self, lattice: MarkovLattice, plans: list[StagePlan],
                 battery: BatterySpec, opts: TradingOptions,
                 cuts: list[list[list[Cut]]] | None = None):
        if len(plans) != lattice.n_stages:
            raise DataError(f"{len(plans)} stage plans vs {lattice.n_stages} "
                            "lattice stages")
        for i, p in enumerate(plans):
            if p.t != i + 1:
                raise DataError("stage plans must be numbered consecutively from 1")
        if not plans[-1].terminal:
            raise DataError("the last stage plan must be terminal")
        self.lattice = lattice
        self.plans = plans
        self.battery = battery
        self.opts = opts
        self.layout = StateLayout.for_lattice(lattice, opts)
        self.T = lattice.n_stages
        self.theta_ubs = self._future_value_bounds()
        self.cuts = cuts if cuts is not None else [
            [[] for _ in lattice.nodes(t)] for t in range(1, self.T + 1)]
        self._solvers: dict[tuple[int, int, int], StageSolver] = {}
        self.n_lp_solves = 0
        self.iteration = 0
        self.track_activity = False

    # -- bounds on the future value ------------------------------------------

    def _max_stage_revenue(self, t: int) -> float:
        plan = self.plans[t - 1]
        L = self.battery.rated_power_mw
        best = 0.0
        for node in self.lattice.nodes(t):
            rev = 0.0
            for ev in plan.clearings:
                for f in ev.blocks:
                    if ev.market is Market.ID:
                        rev += float(np.abs(node.id_levels[f - 1]).max()) * L
                    elif ev.market is Market.DA:
                        rev += abs(float(node.da_prices[f - 1])) * L
                    else:
                        rev += max(float(node.fcr_prices[f - 1]), 0.0) * \
                            self.opts.fcr_price_scale * 0.5 * L
            best = max(best, rev)
        return best

    def _future_value_bounds(self) -> list[float]:
        per_stage = [self._max_stage_revenue(t) for t in range(1, self.T + 1)]
        tail = 0.0
        ubs = [0.0] * (self.T + 1)
        for t in range(self.T, 0, -1):
            ubs[t] = tail
            tail += per_stage[t - 1]
        return ubs

    # -- solvers ----------------------------------------------------------------

    def solver(self, t: int, node: int, w: int) -> StageSolver:
        key = (t, node, w)
        s = self._solvers.get(key)
        if s is None:
            tpl = build_stage_template(
                self.plans[t - 1], self.layout, self.lattice, node, w,
                self.battery, self.opts,
                None if self.plans[t - 1].terminal else self.theta_ubs[t])
            s = StageSolver(tpl)
            self._solvers[key] = s
        s.sync_cuts([(c.intercept, c.gradient) for c in self.cuts[t - 1][node]])
        return s

    def drop_solvers(self, t: int, node: int) -> None:
        for w in range(self.lattice.n_id_levels):
            self._solvers.pop((t, node, w), None)

    def omegas(self, t: int, node: int) -> list[tuple[int, float]]:
        """Intraday realizations of a stage-node with their probabilities."""
        plan = self.plans[t - 1]
        if plan.clearing_for(Market.ID) is None or not self.opts.has(Market.ID):
            return [(0, 1.0)]
        probs = self.lattice.nodes(t)[node].id_probs
        return [(j, float(p)) for j, p in enumerate(probs) if p > 0]

    def solve_stage(self, t: int, node: int, w: int, state: np.ndarray,
                    need_duals: bool = False):
        out = self.solver(t, node, w).solve(state, need_duals)
        self.n_lp_solves += 1
        if self.track_activity and out.cut_duals is not None and len(out.cut_duals):
            cutlist = self.cuts[t - 1][node]
            for j in np.nonzero(np.abs(out.cut_duals) > 1e-12)[0]:
                if j < len(cutlist):
                    cutlist[j].last_active = self.iteration
        return out

    def initial_state(self) -> np.ndarray:
        return self.layout.initial_state(self.battery)

    # -- sampling -----------------------------------------------------------------

    def sample_path(self, rng: np.random.Generator) -> tuple[list[int], list[int]]:
        nodes = [self.lattice.sample_initial(rng)]
        for t in range(1, self.T):
            nodes.append(self.lattice.sample_next(t, nodes[-1], rng))
        draws = []
        for t in range(1, self.T + 1):
            omegas = self.omegas(t, nodes[t - 1])
            if len(omegas) == 1:
                draws.append(omegas[0][0])
            else:
                probs = np.array([p for _, p in omegas])
                pick = rng.choice(len(omegas), p=probs)
                draws.append(omegas[pick][0])
        return nodes, draws

    def run_forward(self, nodes: list[int], draws: list[int], collect=False):
        """Solve the stage sequence along a sampled path.

        Returns (states entering each stage, total revenue, total slack,
        optional per-stage outcomes)."""
        state = self.initial_state()
        states = [state]
        revenue = 0.0
        slack = 0.0
        outcomes = [] if collect else None
        for t in range(1, self.T + 1):
            out = self.solve_stage(t, nodes[t - 1], draws[t - 1], state)
            revenue += out.stage_revenue
            slack += out.slack_mwh
            state = out.state_out
            states.append(state)
            if collect:
                outcomes.append(out)
        return states, revenue, slack, outcomes


def train(lattice: MarkovLattice, plans: list[StagePlan], battery: BatterySpec,
          opts: TradingOptions, cfg: TrainConfig,
          progress: Callable[[TrainProgress], None] | None = None,
          config_hash: str | None = None,
          lattice_checksum: str | None = None) -> Policy:
    """Run the forward/backward iteration until the stopping rule fires."""
    model = SddpModel(lattice, plans, battery, opts)
    model.track_activity = cfg.cut_cap is not None
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple[int, float, float, float]] = []
    bounds: list[float] = []
    seen_paths: set[tuple[int, ...]] = set()
    stop_reason = "max_iterations"

    iteration = 0
    while iteration < cfg.max_iterations:
        iteration += 1
        model.iteration = iteration
        fwd_value = 0.0
        fwd_slack = 0.0
        for _ in range(cfg.forward_passes_per_iteration):
            nodes, draws = model.sample_path(rng)
            seen_paths.add(tuple(nodes))
            states, revenue, slack, _ = model.run_forward(nodes, draws)
            fwd_value += revenue
            fwd_slack += slack
            _backward_pass(model, nodes, states, iteration, cfg)
        fwd_value /= cfg.forward_passes_per_iteration
        fwd_slack /= cfg.forward_passes_per_iteration

        bound = _first_stage_bound(model)
        if not np.isfinite(bound):
            raise NumericalError(f"upper bound became non-finite at iteration "
                                 f"{iteration}: {bound}")
        if bounds and bound > bounds[-1] + BOUND_MONOTONE_TOL * max(1.0, abs(bounds[-1])):
            raise NumericalError(
                f"upper bound increased at iteration {iteration}: "
                f"{bounds[-1]} -> {bound}")
        bounds.append(bound)
        history.append((iteration, bound, fwd_value, fwd_slack))
        if progress is not None:
            progress(TrainProgress(iteration, bound, fwd_value, fwd_slack))

        if (iteration >= cfg.initial_iterations and iteration > cfg.stall_window):
            improvement = bounds[iteration - cfg.stall_window - 1] - bound
            if improvement < cfg.stall_abs_improvement:
                stop_reason = "stalled"
                break

    return Policy(
        markets=opts.markets, layout=model.layout, cuts=model.cuts,
        theta_ubs=model.theta_ubs,
        bound_history=np.array(history, dtype=float),
        iterations=iteration, stop_reason=stop_reason, seed=cfg.seed,
        config_hash=config_hash, lattice_checksum=lattice_checksum,
        n_lp_solves=model.n_lp_solves, n_unique_node_paths=len(seen_paths))


def _backward_pass(model: SddpModel, nodes: list[int], states: list[np.ndarray],
                   iteration: int, cfg: TrainConfig) -> None:
    for t in range(model.T, 1, -1):
        parent = nodes[t - 2]
        state = states[t - 1]
        children, probs = model.lattice.children(t - 1, parent)
        alpha = 0.0
        beta = np.zeros(model.layout.dim)
        for child, p in zip(children, probs):
            for w, q in model.omegas(t, int(child)):
                out = model.solve_stage(t, int(child), w, state, need_duals=True)
                weight = p * q
                lam = out.state_duals
                alpha += weight * (out.objective - float(lam @ state))
                beta += weight * lam
        cutlist = model.cuts[t - 2][parent]
        if not _duplicate_cut(cutlist, alpha, beta):
            cutlist.append(Cut(intercept=alpha, gradient=beta, iteration=iteration))
            if cfg.cut_cap is not None and len(cutlist) > cfg.cut_cap:
                _prune_cuts(model, t - 1, parent, iteration, cfg)


def _duplicate_cut(cutlist: list[Cut], alpha: float, beta: np.ndarray,
                   lookback: int = 50) -> bool:
    """A cut numerically identical to a recent one adds nothing."""
    scale = max(1.0, abs(alpha))
    for c in cutlist[-lookback:]:
        if abs(c.intercept - alpha) <= 1e-12 * scale and \
                np.allclose(c.gradient, beta, rtol=1e-12, atol=1e-12):
            return True
    return False


def _prune_cuts(model: SddpModel, t: int, node: int, iteration: int,
                cfg: TrainConfig) -> None:
    """Drop cuts that have not supported the approximation recently."""
    cutlist = model.cuts[t - 1][node]
    keep = [c for c in cutlist
            if iteration - max(c.iteration, c.last_active) <= cfg.cut_inactive_window]
    overflow = len(keep) - cfg.cut_cap
    if overflow > 0:
        keep.sort(key=lambda c: max(c.iteration, c.last_active))
        keep = keep[overflow:]
    model.cuts[t - 1][node] = keep
    model.drop_solvers(t, node)


def _first_stage_bound(model: SddpModel) -> float:
    state = model.initial_state()
    bound = 0.0
    for node, p in enumerate(model.lattice.initial_distribution):
        if p <= 0:
            continue
        value = 0.0
        for w, q in model.omegas(1, node):
            out = model.solve_stage(1, node, w, state)
            value += q * out.objective
        bound += p * value
    return bound


def bound_history(policy: Policy) -> np.ndarray:
    """(iteration, upper_bound, forward_value, slack) rows recorded in training."""
    return policy.bound_history


def evaluate_stage(policy: Policy, lattice: MarkovLattice, plans: list[StagePlan],
                   battery: BatterySpec, opts: TradingOptions, t: int = 1,
                   state: np.ndarray | None = None,
                   nodes: list[int] | None = None):
    """Bid curves prescribed by the trained policy at one stage.

    Defaults to the first stage from the initial state, weighting initial
    nodes by the lattice's initial distribution.  Returns a per-node dict
    of bid curves (market -> block -> level quantities) and the expected
    objective value.
    """
    model = SddpModel(lattice, plans, battery, opts, cuts=policy.cuts)
    if state is None:
        state = model.initial_state()
    plan = plans[t - 1]
    if nodes is None:
        if t == 1:
            weights = {i: float(p) for i, p in
                       enumerate(lattice.initial_distribution) if p > 0}
        else:
            weights = {i: 1.0 / len(lattice.nodes(t))
                       for i in range(len(lattice.nodes(t)))}
    else:
        weights = {i: 1.0 / len(nodes) for i in nodes}
    curves: dict[int, dict] = {}
    expected = 0.0
    for node, p in weights.items():
        value = 0.0
        per_market: dict = {}
        for w, q in model.omegas(t, node):
            out = model.solve_stage(t, node, w, state)
            value += q * out.objective
            if not per_market:
                tpl = model.solver(t, node, w).tpl
                for bid in plan.bids:
                    blocks = {}
                    for f in bid.blocks:
                        qty = [float(out.values[tpl.names.index(
                            f"x_id[{n}]" if bid.market is Market.ID
                            else f"x_{bid.market.value}[{f}][{n}]")])
                            for n in range(1, model.layout.levels(bid.market) + 1)]
                        blocks[f] = qty
                    per_market[bid.market] = blocks
        curves[node] = per_market
        expected += p * value
    return curves, expected


def evaluate_first_stage(policy: Policy, lattice: MarkovLattice,
                         plans: list[StagePlan], battery: BatterySpec,
                         opts: TradingOptions):
    return evaluate_stage(policy, lattice, plans, battery, opts, t=1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_policy(policy: Policy, path) -> None:
    payload = {
        "markets": [m.value for m in policy.markets],
        "layout": {
            "n_da_levels": policy.layout.n_da_levels,
            "n_fcr_levels": policy.layout.n_fcr_levels,
            "n_id_levels": policy.layout.n_id_levels,
        },
        "theta_ubs": list(policy.theta_ubs),
        "cuts": [[[{"a": c.intercept, "b": c.gradient.tolist(), "it": c.iteration}
                   for c in node_cuts] for node_cuts in stage_cuts]
                 for stage_cuts in policy.cuts],
        "bound_history": policy.bound_history.tolist(),
        "iterations": policy.iterations,
        "stop_reason": policy.stop_reason,
        "seed": policy.seed,
        "config_hash": policy.config_hash,
        "lattice_checksum": policy.lattice_checksum,
        "n_lp_solves": policy.n_lp_solves,
        "n_unique_node_paths": policy.n_unique_node_paths,
    }
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    doc = {"format": POLICY_FORMAT, "version": POLICY_VERSION,
           "checksum": hashlib.sha256(body.encode()).hexdigest(),
           "payload": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_policy(path) -> Policy:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"policy file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"policy file is not valid JSON: {exc}") from exc
    if doc.get("format") != POLICY_FORMAT:
        raise DataError(f"not a policy file: {path}")
    if doc.get("version") != POLICY_VERSION:
        raise DataError(f"unsupported policy version {doc.get('version')}")
    payload = doc["payload"]
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(body.encode()).hexdigest() != doc.get("checksum"):
        raise DataError(f"policy checksum mismatch: {path} is corrupted")
    markets = tuple(Market(m) for m in payload["markets"])
    layout = StateLayout(markets=markets,
                         n_da_levels=payload["layout"]["n_da_levels"],
                         n_fcr_levels=payload["layout"]["n_fcr_levels"],
                         n_id_levels=payload["layout"]["n_id_levels"])
    cuts = [[[Cut(intercept=c["a"], gradient=np.array(c["b"]), iteration=c["it"])
              for c in node_cuts] for node_cuts in stage_cuts]
            for stage_cuts in payload["cuts"]]
    return Policy(
        markets=markets, layout=layout, cuts=cuts,
        theta_ubs=list(payload["theta_ubs"]),
        bound_history=np.array(payload["bound_history"], dtype=float),
        iterations=payload["iterations"], stop_reason=payload["stop_reason"],
        seed=payload["seed"], config_hash=payload.get("config_hash"),
        lattice_checksum=payload.get("lattice_checksum"),
        n_lp_solves=payload.get("n_lp_solves", 0),
        n_unique_node_paths=payload.get("n_unique_node_paths", 0))
