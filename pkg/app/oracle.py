"""
Offline optimum and audit tools for small auction instances.

``exact_opt`` solves the welfare maximisation exactly by branch and bound
over bids (highest price first) and, for every included bid, over all of its
schedules against the capacity left by the bids already placed. It uses the
same windows and strict precedence as the online schedulers, so the empirical
ratio measures what the auction loses by deciding online.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import numpy as np

from app.auction import AuctionOutcome, run_batch_auction
from app.config import AuctionConfig
from app.model import (
    CAPACITY_EPS,
    Bid,
    MarketState,
    Schedule,
    ValidationReport,
    Violation,
    admission_time,
    longest_path_slots,
    path_slack,
    topological_order,
)
from app.pricing import PriceParams, PricingError
from app.scheduler import check_schedule

logger = logging.getLogger("app.oracle")


class OracleLimitError(Exception):
    """
    Exception raised when an instance is too large for the exact oracle.

    Raised before the search when the bid count or horizon exceeds the limits,
    and during the search when the node budget runs out.
    """
    pass


@dataclass(frozen=True)
class OracleLimits:
    max_bids: int = 6
    max_horizon: int = 12
    node_budget: int = 10 ** 7


@dataclass(frozen=True)
class OptimumReport:
    """
    Optimal welfare of an instance.

    Attributes:
        opt_welfare: Sum of prices of the served bids
        opt_assignment: Schedule per bid id, None for bids left out
        nodes: Search nodes explored
    """
    opt_welfare: float
    opt_assignment: Dict[int, Optional[Schedule]]
    nodes: int

    @property
    def served(self) -> List[int]:
        return sorted(i for i, s in self.opt_assignment.items() if s is not None)


@dataclass(frozen=True)
class HonestRatio:
    """Empirical ratio of a re-run priced with the realised occupation rate, and its bound."""
    ratio: float
    sigma: float
    k: float
    bound: float


class _OptimumSearch:
    def __init__(self, bids: List[Bid], config: AuctionConfig, limits: OracleLimits):
        self.config = config
        self.limits = limits
        self.capacities = np.asarray(config.capacities, dtype=float)
        self.order = sorted((b for b in bids if self._servable(b)), key=lambda b: (-b.price, b.id))
        self.alloc = np.zeros((config.horizon, len(config.capacities)))
        self.suffix = [sum(b.price for b in self.order[i:]) for i in range(len(self.order) + 1)]
        self.current: Dict[int, Schedule] = {}
        self.best = 0.0
        self.best_assignment: Dict[int, Schedule] = {}
        self.nodes = 0

    def _servable(self, bid: Bid) -> bool:
        """False only for bids no schedule can serve even in an empty market."""
        lo, hi = admission_time(bid, self.config.theta), min(bid.deadline, self.config.horizon)
        if hi - lo + 1 < longest_path_slots(bid.graph):
            return False
        return all(np.all(c.demand_array() <= self.capacities + CAPACITY_EPS) for c in bid.containers)

    def _tick(self) -> None:
        self.nodes += 1
        if self.nodes > self.limits.node_budget:
            raise OracleLimitError(
                f"instance too large for exact oracle: node budget of {self.limits.node_budget} exhausted"
            )

    def _placements(self, bid: Bid) -> Iterator[Schedule]:
        """Every schedule of ``bid`` that fits the remaining capacity; capacity is held while yielded."""
        lo, hi = admission_time(bid, self.config.theta), min(bid.deadline, self.config.horizon)
        if lo > hi:
            return
        order = topological_order(bid.graph)
        before, after = path_slack(bid.graph)
        preds = {m: bid.graph.predecessors(m) for m in order}
        chosen: Dict[int, tuple] = {}

        def place(idx: int) -> Iterator[Schedule]:
            if idx == len(order):
                yield Schedule(tuple(chosen[m] for m in range(bid.graph.size)))
                return
            m = order[idx]
            container = bid.containers[m]
            demand = container.demand_array()
            start = max([lo + before[m]] + [chosen[p][-1] + 1 for p in preds[m]])
            end = hi - after[m]
            fits = [
                t for t in range(start, end + 1)
                if np.all(self.alloc[t - 1] + demand <= self.capacities + CAPACITY_EPS)
            ]
            for combo in itertools.combinations(fits, container.slots_required):
                self._tick()
                for t in combo:
                    self.alloc[t - 1] += demand
                chosen[m] = combo
                try:
                    yield from place(idx + 1)
                finally:
                    del chosen[m]
                    for t in combo:
                        self.alloc[t - 1] -= demand

        yield from place(0)

    def search(self, i: int = 0, welfare: float = 0.0) -> None:
        if welfare + self.suffix[i] <= self.best:
            return
        if i == len(self.order):
            self.best = welfare
            self.best_assignment = dict(self.current)
            return
        bid = self.order[i]
        placements = self._placements(bid)
        try:
            for schedule in placements:
                self.current[bid.id] = schedule
                self.search(i + 1, welfare + bid.price)
                del self.current[bid.id]
                if welfare + self.suffix[i] <= self.best:
                    return
        finally:
            placements.close()
        self.search(i + 1, welfare)


def exact_opt(bids: List[Bid], config: AuctionConfig, limits: Optional[OracleLimits] = None) -> OptimumReport:
    """
    Maximum social welfare over all feasible joint schedules.

    Raises:
        OracleLimitError: If the instance exceeds ``limits`` or the node budget runs out
    """
    limits = limits or OracleLimits()
    if len(bids) > limits.max_bids or config.horizon > limits.max_horizon:
        raise OracleLimitError(
            f"instance too large for exact oracle: {len(bids)} bids over {config.horizon} slots "
            f"(limits: {limits.max_bids} bids, {limits.max_horizon} slots)"
        )
    search = _OptimumSearch(list(bids), config, limits)
    search.search()
    logger.debug(f"Exact optimum {search.best:.6f} after {search.nodes} nodes")
    assignment = {b.id: search.best_assignment.get(b.id) for b in sorted(bids, key=lambda b: b.id)}
    return OptimumReport(opt_welfare=search.best, opt_assignment=assignment, nodes=search.nodes)


def empirical_ratio(
    bids: List[Bid],
    config: AuctionConfig,
    limits: Optional[OracleLimits] = None,
    optimum: Optional[OptimumReport] = None,
    outcome: Optional[AuctionOutcome] = None,
) -> float:
    """
    OPT welfare over batch auction welfare.

    Returns infinity when the auction serves nobody but OPT is positive, and
    1.0 for an instance where both are zero.
    """
    optimum = optimum or exact_opt(bids, config, limits)
    outcome = outcome or run_batch_auction(bids, config)
    if outcome.social_welfare <= 0:
        if optimum.opt_welfare <= 0:
            logger.info("Both optimum and auction welfare are zero, ratio taken as 1.0")
            return 1.0
        return math.inf
    return optimum.opt_welfare / outcome.social_welfare


def dual_objective(outcome: AuctionOutcome) -> float:
    """Sum of winner utilities plus every final price weighted by its capacity, recomputed from the final state."""
    state = outcome.state
    utilities = sum(o.utility for o in outcome.outcomes if o.accepted)
    return float(utilities + np.sum(state.prices * state.capacities))


def occupation_ratio(outcome: AuctionOutcome) -> float:
    """Smallest fraction of any resource's capacity-time that was sold."""
    state = outcome.state
    sold = state.allocated.sum(axis=0) / (state.capacities * state.horizon)
    return float(np.min(sold))


def audit_outcome(bids: List[Bid], outcome: AuctionOutcome, config: AuctionConfig) -> ValidationReport:
    """
    Global feasibility audit of an auction outcome.

    Checks every winner's schedule (windows at ``config.theta``, slot counts,
    precedence), the joint capacity at every slot, the market allocation
    against the winners' footprints and each winner's payment accounting.
    Audit an FCFS outcome with theta = 1.
    """
    by_id = {b.id: b for b in bids}
    blank = MarketState.empty(config.horizon, config.capacities, outcome.state.params)
    usage = np.zeros_like(outcome.state.allocated)
    found: List[Violation] = []

    for o in outcome.winners:
        bid = by_id.get(o.bid_id)
        if bid is None or o.schedule is None:
            found.append(Violation("container", f"winner {o.bid_id} has no bid or no schedule"))
            continue
        found.extend(check_schedule(o.schedule, bid, blank, config.theta).violations)
        for t, amounts in o.schedule.footprint(bid).items():
            if 1 <= t <= config.horizon:
                usage[t - 1] += amounts
        if o.utility <= 0 or abs(o.utility - (bid.price - o.payment)) > 1e-9 * max(1.0, bid.price):
            found.append(Violation(
                "payment", f"bid {bid.id}: utility {o.utility} inconsistent with price {bid.price} and payment {o.payment}"
            ))

    over = np.argwhere(usage > np.asarray(config.capacities) + CAPACITY_EPS)
    for t, r in over:
        found.append(Violation(
            "capacity", f"slot {t + 1}, resource {r}: {usage[t, r]} allocated over capacity {config.capacities[r]}"
        ))
    if not np.allclose(usage, outcome.state.allocated, atol=1e-9):
        found.append(Violation("allocation", "market allocation differs from the winners' summed footprints"))
    return ValidationReport(tuple(found))


def honest_sigma_ratio(
    bids: List[Bid],
    config: AuctionConfig,
    limits: Optional[OracleLimits] = None,
    optimum: Optional[OptimumReport] = None,
) -> HonestRatio:
    """
    Empirical ratio with sigma set to the occupation rate the auction actually realises.

    The auction runs once with the configured parameters; its realised
    occupation rate becomes sigma (k re-solved) for a second run whose ratio
    is reported together with that run's bound k/(k-1) * alpha. When nothing
    was sold, or the realised rate yields no valid k, the configured
    parameters are kept.
    """
    params = config.price_params
    realised = occupation_ratio(run_batch_auction(bids, config))
    honest: PriceParams = params
    if realised > 0:
        try:
            honest = PriceParams.from_bounds(params.upper, params.lower, sigma=min(realised, 1.0))
        except PricingError as e:
            logger.warning(f"Keeping sigma={params.sigma}: realised occupation {realised} gives no valid k ({e})")
    optimum = optimum or exact_opt(bids, config, limits)
    ratio = empirical_ratio(bids, config.with_params(honest), limits, optimum=optimum)
    return HonestRatio(ratio=ratio, sigma=honest.sigma, k=honest.k, bound=honest.competitive_bound)
