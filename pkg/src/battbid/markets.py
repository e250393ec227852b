"""Market calendar, stage indexing and battery parameters.

The trading day is split into six four-hour blocks; a stage is one
(day, block) pair.  Three markets are traded:

* ``FCR`` -- symmetric capacity reservations for the *next* day, bid in
  block 3, cleared in block 4 of the current day.  Commitments for the
  next day's blocks 4-6 must be cached until the day actually starts,
  because a new clearing happens before they are delivered.
* ``DA`` -- energy for all six blocks of the next day, bid in block 4;
  the clearing is booked at block 1 of the delivery day so that the
  day-ahead price state stays aligned with the intraday spreads that
  condition on it.
* ``ID`` -- energy for the next block, bid one block ahead; the bid
  placed in block 6 targets block 1 of the following day.

No FCR or DA bids are accepted for delivery beyond the horizon, so the
last day never opens those auctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError

BLOCKS_PER_DAY = 6

#: FCR delivery blocks whose commitments must be cached between the
#: clearing (previous day, block 4) and the start of the delivery day.
FCR_CACHE_BLOCKS = (4, 5, 6)


class Market(Enum):
    DA = "da"
    ID = "id"
    FCR = "fcr"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


ALL_MARKETS = (Market.FCR, Market.ID, Market.DA)


@dataclass(frozen=True, order=True)
class StageIndex:
    """One decision stage: day ``d`` (1-based) and four-hour block ``f`` in 1..6."""

    day: int
    block: int

    def __post_init__(self) -> None:
        if self.day < 1:
            raise ConfigError(f"day must be >= 1, got {self.day}")
        if not 1 <= self.block <= BLOCKS_PER_DAY:
            raise ConfigError(f"block must be in 1..{BLOCKS_PER_DAY}, got {self.block}")

    def to_linear(self) -> int:
        """1-based position in the stage sequence."""
        return (self.day - 1) * BLOCKS_PER_DAY + self.block

    @classmethod
    def from_linear(cls, t: int) -> "StageIndex":
        if t < 1:
            raise ConfigError(f"linear stage index must be >= 1, got {t}")
        day, block = divmod(t - 1, BLOCKS_PER_DAY)
        return cls(day + 1, block + 1)

    def next(self) -> "StageIndex":
        return StageIndex.from_linear(self.to_linear() + 1)

    def __repr__(self) -> str:
        return f"({self.day},{self.block})"


@dataclass(frozen=True)
class Horizon:
    """Ordered stage sequence over ``days`` full trading days."""

    days: int
    stages: tuple[StageIndex, ...]

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def last(self) -> StageIndex:
        return self.stages[-1]

    def is_first_day(self, s: StageIndex) -> bool:
        return s.day == 1

    def is_last_day(self, s: StageIndex) -> bool:
        return s.day == self.days


def build_horizon(days: int) -> Horizon:
    """Stage sequence for ``days`` days.

    Day 1 supports only intraday actions (the first FCR/DA clearings
    settle next-day deliveries), and the last day opens no new FCR/DA
    auctions, so fewer than two days leave nothing to trade.
    """
    if days < 2:
        raise ConfigError(f"horizon needs at least 2 days, got {days}")
    stages = tuple(StageIndex.from_linear(t) for t in range(1, days * BLOCKS_PER_DAY + 1))
    return Horizon(days=days, stages=stages)


@dataclass(frozen=True)
class MarketSchedule:
    """Bidding/clearing calendar rules for one market."""

    market: Market
    #: block in which bids are submitted (ID bids happen every block)
    bid_block: int | None
    #: block in which the uncertainty resolves and quantities clear
    clearing_block: int | None
    #: delivery blocks covered by one clearing event
    delivery_span: tuple[int, ...]
    #: delivery blocks that must be cached between clearing and delivery day
    cache_blocks: tuple[int, ...]

    @classmethod
    def standard(cls, market: Market) -> "MarketSchedule":
        span = tuple(range(1, BLOCKS_PER_DAY + 1))
        if market is Market.FCR:
            return cls(market, bid_block=3, clearing_block=4, delivery_span=span,
                       cache_blocks=FCR_CACHE_BLOCKS)
        if market is Market.DA:
            return cls(market, bid_block=4, clearing_block=1, delivery_span=span,
                       cache_blocks=())
        return cls(market, bid_block=None, clearing_block=None, delivery_span=(),
                   cache_blocks=())


def bid_stages(market: Market, horizon: Horizon) -> set[StageIndex]:
    """Stages at which new bid curves for ``market`` may be submitted."""
    if market is Market.FCR:
        return {StageIndex(d, 3) for d in range(1, horizon.days)}
    if market is Market.DA:
        return {StageIndex(d, 4) for d in range(1, horizon.days)}
    # ID: every stage except the very last block of the horizon, whose
    # target stage (day+1, block 1) does not exist.
    return {s for s in horizon.stages if s != horizon.last}


def clearing_stages(market: Market, horizon: Horizon) -> set[StageIndex]:
    """Stages at which ``market`` uncertainty resolves and quantities clear."""
    if market is Market.FCR:
        return {StageIndex(d, 4) for d in range(1, horizon.days)}
    if market is Market.DA:
        return {StageIndex(d, 1) for d in range(2, horizon.days + 1)}
    return {s.next() for s in bid_stages(Market.ID, horizon)}


def delivery_day(market: Market, clearing: StageIndex) -> int:
    """Day whose blocks are settled by a clearing at ``clearing``."""
    if market is Market.FCR:
        return clearing.day + 1
    return clearing.day


@dataclass(frozen=True)
class BatterySpec:
    """Physical battery parameters and the slack penalty.

    ``rated_power_mw`` bounds the traded quantity of a single four-hour
    block (MWh for DA/ID, MW of symmetric reservation for FCR).  The
    storage level must return to ``soc_end_mwh`` at the end of the
    horizon; by default that equals the start level.
    """

    capacity_mwh: float
    rated_power_mw: float
    soc_start_mwh: float
    penalty_eur_per_mwh: float = 3000.0
    soc_end_mwh: float | None = None

    def __post_init__(self) -> None:
        if self.capacity_mwh <= 0:
            raise ConfigError("capacity_mwh must be > 0")
        if self.rated_power_mw <= 0:
            raise ConfigError("rated_power_mw must be > 0")
        if not 0 <= self.soc_start_mwh <= self.capacity_mwh:
            raise ConfigError("soc_start_mwh must lie in [0, capacity_mwh]")
        if self.penalty_eur_per_mwh < 0:
            raise ConfigError("penalty_eur_per_mwh must be >= 0")

    @property
    def soc_end_target(self) -> float:
        return self.soc_start_mwh if self.soc_end_mwh is None else self.soc_end_mwh


@dataclass(frozen=True)
class TradingOptions:
    """Which markets are traded and how the stage problems are shaped."""

    markets: tuple[Market, ...] = ALL_MARKETS
    id_constraints: bool = True
    penalty_eur_mwh: float | None = None
    fcr_price_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.markets:
            raise ConfigError("at least one market must be enabled")
        seen = set()
        for m in self.markets:
            if m in seen:
                raise ConfigError(f"duplicate market {m}")
            seen.add(m)
        if self.fcr_price_scale < 0:
            raise ConfigError("fcr_price_scale must be >= 0")

    def has(self, market: Market) -> bool:
        return market in self.markets

    def penalty(self, battery: BatterySpec) -> float:
        if self.penalty_eur_mwh is not None:
            return self.penalty_eur_mwh
        return battery.penalty_eur_per_mwh


# ---------------------------------------------------------------------------
# Stage plans: the per-stage action schedule consumed by the stage problems.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BidOpening:
    """A new bid-curve set submitted at this stage."""

    market: Market
    delivery_day: int
    blocks: tuple[int, ...]


@dataclass(frozen=True)
class ClearingEvent:
    """A pending bid-curve set clears at this stage."""

    market: Market
    delivery_day: int
    blocks: tuple[int, ...]


@dataclass(frozen=True)
class StagePlan:
    """Everything that happens at one stage, independent of prices."""

    stage: StageIndex
    t: int
    bids: tuple[BidOpening, ...] = ()
    clearings: tuple[ClearingEvent, ...] = ()
    #: cached FCR commitments become live at the start of a day
    fcr_release: bool = False
    #: the ID bid placed here targets the next day, so its storage bounds
    #: must reference the still-uncleared DA bid curves instead of
    #: committed quantities
    id_rest: bool = False
    terminal: bool = False

    def bid_for(self, market: Market) -> BidOpening | None:
        for b in self.bids:
            if b.market is market:
                return b
        return None

    def clearing_for(self, market: Market) -> ClearingEvent | None:
        for c in self.clearings:
            if c.market is market:
                return c
        return None


def build_stage_plans(horizon: Horizon, opts: TradingOptions) -> list[StagePlan]:
    """Expand the market calendar into per-stage plans for enabled markets."""
    span = tuple(range(1, BLOCKS_PER_DAY + 1))
    fcr_bids = bid_stages(Market.FCR, horizon) if opts.has(Market.FCR) else set()
    fcr_clear = clearing_stages(Market.FCR, horizon) if opts.has(Market.FCR) else set()
    da_bids = bid_stages(Market.DA, horizon) if opts.has(Market.DA) else set()
    da_clear = clearing_stages(Market.DA, horizon) if opts.has(Market.DA) else set()
    id_bids = bid_stages(Market.ID, horizon) if opts.has(Market.ID) else set()

    plans: list[StagePlan] = []
    for s in horizon.stages:
        bids: list[BidOpening] = []
        clearings: list[ClearingEvent] = []
        if s in fcr_bids:
            bids.append(BidOpening(Market.FCR, s.day + 1, span))
        if s in da_bids:
            bids.append(BidOpening(Market.DA, s.day + 1, span))
        if s in id_bids:
            target = s.next()
            bids.append(BidOpening(Market.ID, target.day, (target.block,)))
        if s in fcr_clear:
            clearings.append(ClearingEvent(Market.FCR, s.day + 1, span))
        if s in da_clear:
            clearings.append(ClearingEvent(Market.DA, s.day, span))
        if opts.has(Market.ID) and s.to_linear() > 1:
            clearings.append(ClearingEvent(Market.ID, s.day, (s.block,)))
        plans.append(StagePlan(
            stage=s,
            t=s.to_linear(),
            bids=tuple(bids),
            clearings=tuple(clearings),
            fcr_release=opts.has(Market.FCR) and s.block == 1 and s.day > 1,
            id_rest=s.block == BLOCKS_PER_DAY and not horizon.is_last_day(s),
            terminal=s == horizon.last,
        ))
    return plans
