"""
Batch primal-dual posted-price auction and its first-come-first-served baseline.

Bids are grouped into batches of ``theta`` slots by arrival. Within a batch the
auction repeatedly schedules every unresolved bid against the current prices,
selects the bid with the largest value per unit of posted cost, charges it that
cost and commits its schedule, which raises the prices of the slots it uses.
Payments never depend on the winner's own bid, which keeps the auction truthful.

Example:
    >>> outcome = run_batch_auction(bids, config)
    >>> outcome.social_welfare, outcome.revenue, outcome.winner_fraction
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

import numpy as np

from app.config import AuctionConfig
from app.model import Bid, MarketState, Schedule, admission_time
from app.scheduler import SchedulerError, SchedulingResult, check_schedule, schedule_bid
from app.utils.events import EventLog

logger = logging.getLogger("app.auction")

# Relative slack on the per-acceptance increment check.
INCREMENT_RTOL = 1e-9


class AuctionError(Exception):
    """
    Exception raised when the auction cannot run or would commit an invalid schedule.

    Raised for configurations without price parameters, capacity vectors that
    do not match the price parameters, and schedules that fail verification
    at commit time.
    """
    pass


@dataclass(frozen=True)
class BidOutcome:
    """
    Decision for one bid.

    Attributes:
        bid_id: Bid identifier
        accepted: Whether the bid won
        schedule: Committed schedule of a winner, None otherwise
        payment: Posted cost charged at acceptance, 0 for losers
        utility: price - payment for winners, 0 for losers
        batch: Batch index q (arrival slot for the FCFS baseline)
        reason: ``accepted``, ``batch-lost``, ``no-profitable-schedule`` or
            ``scheduler-error: ...``
    """
    bid_id: int
    accepted: bool
    schedule: Optional[Schedule]
    payment: float
    utility: float
    batch: int
    reason: str

    @classmethod
    def rejected(cls, bid_id: int, batch: int, reason: str) -> "BidOutcome":
        return cls(bid_id, False, None, 0.0, 0.0, batch, reason)


@dataclass(frozen=True)
class Increment:
    """
    Primal and dual change caused by one acceptance.

    ``delta_primal`` is the winner's price and ``delta_dual`` is its utility
    plus the capacity-weighted price increase. ``bound_holds`` checks
    delta_primal >= exp(-alpha * max_step) * delta_dual / max(alpha, 1), where
    max_step is the largest allocated fraction of capacity added to one slot.
    ``raw_holds`` checks delta_primal >= delta_dual / alpha.
    """
    bid_id: int
    batch: int
    delta_primal: float
    delta_dual: float
    alpha: float
    max_step: float
    bound_holds: bool
    raw_holds: bool


@dataclass
class AuctionOutcome:
    """
    Result of a complete auction run.

    Attributes:
        outcomes: One BidOutcome per input bid, ordered by bid id
        social_welfare: Sum of the prices of accepted bids
        revenue: Sum of payments
        dual_objective: Sum of winner utilities plus every price weighted by its capacity, maintained incrementally
        state: Market state at termination
        job_loss: Number of bids lost to batching (deadline before admission)
        increments: Per-acceptance primal/dual changes in acceptance order
    """
    outcomes: List[BidOutcome]
    social_welfare: float
    revenue: float
    dual_objective: float
    state: MarketState
    job_loss: int = 0
    increments: List[Increment] = field(default_factory=list)

    @property
    def winners(self) -> List[BidOutcome]:
        return [o for o in self.outcomes if o.accepted]

    @property
    def winner_fraction(self) -> float:
        if not self.outcomes:
            return 0.0
        return len(self.winners) / len(self.outcomes)

    def outcome_for(self, bid_id: int) -> Optional[BidOutcome]:
        return next((o for o in self.outcomes if o.bid_id == bid_id), None)


def _initial_state(config: AuctionConfig) -> MarketState:
    if config.price_params is None:
        raise AuctionError("Auction config has no price parameters; resolve price bounds before running")
    if config.price_params.resources != len(config.capacities):
        raise AuctionError(
            f"Price parameters cover {config.price_params.resources} resources "
            f"but {len(config.capacities)} capacities were given"
        )
    return MarketState.empty(config.horizon, config.capacities, config.price_params)


def _dual_value(state: MarketState) -> float:
    return float(np.sum(state.prices * state.capacities))


def _window_touched(bid: Bid, theta: int, horizon: int, touched: Set[int]) -> bool:
    lo, hi = admission_time(bid, theta), min(bid.deadline, horizon)
    return any(lo <= t <= hi for t in touched)


def apply_schedule(schedule: Schedule, bid: Bid, state: MarketState, theta: int = 1) -> MarketState:
    """
    Commit a schedule's footprint to the market and reprice the touched slots.

    Args:
        schedule: Schedule to commit
        bid: Bid the schedule belongs to
        state: Market, mutated in place
        theta: Batch interval, for the window check

    Returns:
        The same ``state`` after the update

    Raises:
        AuctionError: If the schedule fails verification against the current state
    """
    report = check_schedule(schedule, bid, state, theta)
    if not report.ok:
        details = "; ".join(v.message for v in report.violations)
        raise AuctionError(f"Refusing to commit schedule of bid {bid.id}: {details}")
    for t, amounts in schedule.footprint(bid).items():
        state.allocate(t, amounts)
    return state


def _accept(
    bid: Bid,
    result: SchedulingResult,
    state: MarketState,
    theta: int,
    batch: int,
    events: Optional[EventLog],
    increments: List[Increment],
) -> BidOutcome:
    payment = result.cost
    utility = bid.price - payment
    footprint = result.schedule.footprint(bid)
    slots = sorted(footprint)
    before = state.prices[[t - 1 for t in slots]].copy()

    apply_schedule(result.schedule, bid, state, theta)

    after = state.prices[[t - 1 for t in slots]]
    price_rise = float(np.sum((after - before) * state.capacities))
    delta_dual = utility + price_rise
    alpha = state.params.alpha
    max_step = max(float(np.max(amounts / state.capacities)) for amounts in footprint.values())
    bound = math.exp(-alpha * max_step) * delta_dual / max(alpha, 1.0)
    increment = Increment(
        bid_id=bid.id,
        batch=batch,
        delta_primal=bid.price,
        delta_dual=delta_dual,
        alpha=alpha,
        max_step=max_step,
        bound_holds=bid.price >= bound * (1 - INCREMENT_RTOL),
        raw_holds=bid.price >= delta_dual / alpha * (1 - INCREMENT_RTOL),
    )
    increments.append(increment)
    if not increment.bound_holds:
        logger.warning(
            f"Bid {bid.id}: primal increment {bid.price} below bound {bound} (dual increment {delta_dual})"
        )

    if events is not None:
        events.emit("accept", bid=bid.id, batch=batch, payment=payment, utility=utility,
                    schedule=result.schedule.to_dict())
        for i, t in enumerate(slots):
            events.emit("price_update", bid=bid.id, slot=t, prices=after[i].tolist())
    logger.debug(f"Batch {batch}: accepted bid {bid.id}, payment {payment:.6f}, utility {utility:.6f}")
    return BidOutcome(bid.id, True, result.schedule, payment, utility, batch, "accepted")


def _reject(bid: Bid, batch: int, reason: str, events: Optional[EventLog]) -> BidOutcome:
    if events is not None:
        events.emit("reject", bid=bid.id, batch=batch, reason=reason)
    logger.debug(f"Batch {batch}: rejected bid {bid.id} ({reason})")
    return BidOutcome.rejected(bid.id, batch, reason)


def process_batch(
    batch: List[Bid],
    state: MarketState,
    theta: int,
    m_cap: int = 8,
    events: Optional[EventLog] = None,
    increments: Optional[List[Increment]] = None,
) -> List[BidOutcome]:
    """
    Decide every bid of one batch against the evolving market.

    Each round schedules the unresolved bids at current prices, rejects the ones
    without a profitable schedule, then accepts the bid with the largest
    price / cost ratio (ties to the lower id) and commits its schedule. A bid's
    schedule is recomputed only when the last commit touched a slot inside its
    window; prices outside that window did not move.

    Args:
        batch: Bids sharing one admission time
        state: Market, mutated by every acceptance
        theta: Batch interval
        m_cap: Container cap for the exact DAG search
        events: Optional event sink
        increments: Optional list collecting per-acceptance increments

    Returns:
        Outcomes in resolution order
    """
    if not batch:
        return []
    if increments is None:
        increments = []
    index = admission_time(batch[0], theta) // theta
    pending: Dict[int, Bid] = {b.id: b for b in sorted(batch, key=lambda b: b.id)}
    cache: Dict[int, SchedulingResult] = {}
    touched: Optional[Set[int]] = None
    resolved: List[BidOutcome] = []

    while pending:
        for bid_id in sorted(pending):
            bid = pending[bid_id]
            if bid_id in cache and not _window_touched(bid, theta, state.horizon, touched or set()):
                continue
            try:
                cache[bid_id] = schedule_bid(bid, state, theta, m_cap)
            except SchedulerError as e:
                resolved.append(_reject(bid, index, f"scheduler-error: {e}", events))
                del pending[bid_id]
                continue
            if events is not None:
                result = cache[bid_id]
                events.emit("schedule", bid=bid_id, batch=index, feasible=result.feasible,
                            cost=None if math.isinf(result.cost) else result.cost)

        for bid_id in sorted(pending):
            if not cache[bid_id].feasible:
                resolved.append(_reject(pending.pop(bid_id), index, "no-profitable-schedule", events))
                del cache[bid_id]
        if not pending:
            break

        chosen = max(sorted(pending), key=lambda i: pending[i].price / cache[i].cost)
        bid, result = pending.pop(chosen), cache.pop(chosen)
        resolved.append(_accept(bid, result, state, theta, index, events, increments))
        touched = set(result.schedule.slots())

    return resolved


def _finish(bids: List[Bid], resolved: List[BidOutcome], state: MarketState,
            initial_dual: float, increments: List[Increment], job_loss: int) -> AuctionOutcome:
    outcomes = sorted(resolved, key=lambda o: o.bid_id)
    winners = [o for o in outcomes if o.accepted]
    prices = {b.id: b.price for b in bids}
    return AuctionOutcome(
        outcomes=outcomes,
        social_welfare=sum(prices[o.bid_id] for o in winners),
        revenue=sum(o.payment for o in winners),
        dual_objective=initial_dual + sum(i.delta_dual for i in increments),
        state=state,
        job_loss=job_loss,
        increments=increments,
    )


def run_batch_auction(bids: List[Bid], config: AuctionConfig, events: Optional[EventLog] = None) -> AuctionOutcome:
    """
    Run the batch auction over a whole workload.

    Batch q collects the bids with arrival in ((q-1)theta, q*theta]; batches are
    processed in order. Bids whose deadline falls before their admission time
    are lost to batching and rejected without scheduling.

    Raises:
        AuctionError: If the configuration lacks usable price parameters
    """
    state = _initial_state(config)
    theta = config.theta
    initial_dual = _dual_value(state)
    increments: List[Increment] = []
    resolved: List[BidOutcome] = []
    job_loss = 0

    batches: Dict[int, List[Bid]] = {}
    for bid in bids:
        batches.setdefault(admission_time(bid, theta) // theta, []).append(bid)

    for index in sorted(batches):
        admission = index * theta
        live = []
        for bid in sorted(batches[index], key=lambda b: b.id):
            if bid.deadline < admission:
                resolved.append(_reject(bid, index, "batch-lost", events))
                job_loss += 1
            else:
                live.append(bid)
        if events is not None:
            events.emit("batch", batch=index, admission=admission, bids=len(live), lost=len(batches[index]) - len(live))
        resolved.extend(process_batch(live, state, theta, config.max_containers_exact, events, increments))

    outcome = _finish(bids, resolved, state, initial_dual, increments, job_loss)
    logger.info(
        f"Batch auction (theta={theta}): {len(outcome.winners)}/{len(bids)} winners, "
        f"welfare {outcome.social_welfare:.4f}, job loss {job_loss}"
    )
    return outcome


def run_fcfs_baseline(bids: List[Bid], config: AuctionConfig, events: Optional[EventLog] = None) -> AuctionOutcome:
    """
    Online first-come-first-served baseline: each bid is scheduled once on arrival.

    Uses the same prices and schedulers as the batch auction with theta = 1;
    bids are taken in (arrival, id) order and accepted iff their cheapest
    schedule leaves positive utility.
    """
    state = _initial_state(config)
    initial_dual = _dual_value(state)
    increments: List[Increment] = []
    resolved: List[BidOutcome] = []

    for bid in sorted(bids, key=lambda b: (b.arrival, b.id)):
        try:
            result = schedule_bid(bid, state, 1, config.max_containers_exact)
        except SchedulerError as e:
            resolved.append(_reject(bid, bid.arrival, f"scheduler-error: {e}", events))
            continue
        if result.feasible:
            resolved.append(_accept(bid, result, state, 1, bid.arrival, events, increments))
        else:
            resolved.append(_reject(bid, bid.arrival, "no-profitable-schedule", events))

    outcome = _finish(bids, resolved, state, initial_dual, increments, 0)
    logger.info(
        f"FCFS baseline: {len(outcome.winners)}/{len(bids)} winners, welfare {outcome.social_welfare:.4f}"
    )
    return outcome
