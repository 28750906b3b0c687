"""
Utility-maximising container scheduling against posted prices.

Two exact schedulers find the cheapest schedule of one job at the current
prices without changing the market:

- ``schedule_chain``: dynamic program over interval boundaries for jobs whose
  container graph is a service chain.
- ``schedule_general``: depth-first branch and bound over slot subsets for
  arbitrary DAGs, bounded by ``m_cap`` containers.

Precedence is strict: every slot of a predecessor lies before every slot of
its successor. Sub-tasks are preemptible, so a container may use any
``slots_required`` slots of its window, contiguous or not. Independent
containers of one job may share a slot as long as their joint demand fits.

Both schedulers only report schedules whose cost is strictly below the bid
price; a job that cannot be served profitably gets a result without schedule.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.model import (
    CAPACITY_EPS,
    Bid,
    Container,
    MarketState,
    Schedule,
    ValidationReport,
    Violation,
    admission_time,
    is_chain,
    path_slack,
    topological_order,
)
from app.pricing import schedule_cost

logger = logging.getLogger("app.scheduler")

DEFAULT_M_CAP = 8


class SchedulerError(Exception):
    """
    Exception raised when a job cannot be handed to the requested scheduler.

    Raised for non-chain graphs passed to the chain scheduler and for graphs
    larger than the exact-search cap.
    """
    pass


@dataclass(frozen=True)
class SchedulingResult:
    """
    Outcome of scheduling one job.

    Attributes:
        utility: max(0, price - cost)
        schedule: Cheapest profitable schedule, or None
        cost: Cost of the schedule; the cheapest cost found when unprofitable,
            infinity when no schedule was found at all
        footprint: Per-slot resource usage of the schedule
        nodes: Search nodes explored (DAG search only)
    """
    utility: float
    schedule: Optional[Schedule]
    cost: float
    footprint: Dict[int, Tuple[float, ...]] = field(default_factory=dict)
    nodes: int = 0

    @property
    def feasible(self) -> bool:
        return self.schedule is not None

    @classmethod
    def none(cls, cost: float = math.inf, nodes: int = 0) -> "SchedulingResult":
        return cls(utility=0.0, schedule=None, cost=cost, footprint={}, nodes=nodes)


def _result(bid: Bid, schedule: Schedule, state: MarketState, nodes: int = 0) -> SchedulingResult:
    cost = schedule_cost(schedule, bid, state)
    if bid.price - cost <= 0:
        return SchedulingResult.none(cost=cost, nodes=nodes)
    footprint = {t: tuple(float(x) for x in amounts) for t, amounts in schedule.footprint(bid).items()}
    return SchedulingResult(bid.price - cost, schedule, cost, footprint, nodes)


def _job_window(bid: Bid, state: MarketState, theta: int) -> Tuple[int, int]:
    return admission_time(bid, theta), min(bid.deadline, state.horizon)


def feasible_slots(
    container: Container,
    window: Tuple[int, int],
    state: MarketState,
    extra: Optional[Dict[int, np.ndarray]] = None,
) -> List[Tuple[int, float]]:
    """
    Slots of ``window`` where the container fits, with its unit cost there.

    Args:
        container: Container to place
        window: Inclusive slot range (lo, hi)
        state: Market whose allocation and prices are read
        extra: Usage by other containers of the same job, per slot

    Returns:
        (slot, cost of one container slot there) pairs in ascending slot order
    """
    lo, hi = max(window[0], 1), min(window[1], state.horizon)
    if lo > hi:
        return []
    demand = container.demand_array()
    used = state.allocated[lo - 1:hi].copy()
    if extra:
        for t, amounts in extra.items():
            if lo <= t <= hi:
                used[t - lo] += amounts
    fits = np.all(used + demand <= state.capacities + CAPACITY_EPS, axis=1)
    costs = state.prices[lo - 1:hi] @ demand
    return [(lo + i, float(costs[i])) for i in range(hi - lo + 1) if fits[i]]


def _cheapest(costs: Dict[int, float], lo: int, hi: int, count: int) -> List[int]:
    ranked = sorted((c, t) for t, c in costs.items() if lo <= t <= hi)
    return sorted(t for _, t in ranked[:count])


def schedule_chain(bid: Bid, state: MarketState, theta: int) -> SchedulingResult:
    """
    Cheapest schedule of a service chain by dynamic programming.

    For chain position j with interval [t_s, t_e], best_j(t_s, t_e) is the sum
    of the N_j cheapest feasible slots inside it. With g_0 = 0,

        g_j(t_e) = min over t_s of best_j(t_s, t_e) + min_{t' < t_s} g_{j-1}(t')

    and the answer is min over t_e of g_M(t_e). Every strictly ordered schedule
    is covered by some choice of intervals, so the result is exact.

    Raises:
        SchedulerError: If the graph is not a chain
    """
    if not is_chain(bid.graph):
        raise SchedulerError(f"Bid {bid.id} is not a service chain; route to schedule_general")
    lo, hi = _job_window(bid, state, theta)
    if lo > hi or bid.graph.size == 0:
        return SchedulingResult.none()

    order = topological_order(bid.graph)
    need = [bid.containers[m].slots_required for m in order]
    prefix = [sum(need[:j]) for j in range(len(order))]
    suffix = [sum(need[j + 1:]) for j in range(len(order))]
    width = hi - lo + 1

    previous: Optional[List[float]] = None
    choices: List[Dict[int, Tuple[int, Optional[int]]]] = []
    slot_costs: List[Dict[int, float]] = []

    for j, m in enumerate(order):
        first, last = lo + prefix[j], hi - suffix[j]
        if last - first + 1 < need[j]:
            return SchedulingResult.none()
        costs = dict(feasible_slots(bid.containers[m], (first, last), state))
        slot_costs.append(costs)

        # floor[t - lo]: cheapest g_{j-1}(t') over t' < t, with its earliest argmin
        floor_val = [math.inf] * (width + 1)
        floor_arg: List[Optional[int]] = [None] * (width + 1)
        if previous is not None:
            for i in range(1, width + 1):
                floor_val[i], floor_arg[i] = floor_val[i - 1], floor_arg[i - 1]
                if previous[i - 1] < floor_val[i]:
                    floor_val[i], floor_arg[i] = previous[i - 1], lo + i - 1

        g = [math.inf] * width
        arg: Dict[int, Tuple[int, Optional[int]]] = {}
        for ts in range(first, last - need[j] + 2):
            if previous is None:
                base, base_arg = 0.0, None
            else:
                base, base_arg = floor_val[ts - lo], floor_arg[ts - lo]
                if base == math.inf:
                    continue
            heap: List[Tuple[float, int]] = []
            total = 0.0
            for te in range(ts, last + 1):
                c = costs.get(te)
                if c is not None:
                    heapq.heappush(heap, (-c, -te))
                    total += c
                    if len(heap) > need[j]:
                        dropped, _ = heapq.heappop(heap)
                        total += dropped
                if len(heap) == need[j] and base + total < g[te - lo]:
                    g[te - lo] = base + total
                    arg[te] = (ts, base_arg)
        choices.append(arg)
        previous = g

    best = min(previous)
    if best == math.inf:
        return SchedulingResult.none()
    te: Optional[int] = lo + previous.index(best)

    assignment: Dict[int, Tuple[int, ...]] = {}
    for j in range(len(order) - 1, -1, -1):
        ts, prev_te = choices[j][te]
        assignment[order[j]] = tuple(_cheapest(slot_costs[j], ts, te, need[j]))
        te = prev_te
    schedule = Schedule(tuple(assignment[m] for m in range(bid.graph.size)))
    return _result(bid, schedule, state)


class _BranchAndBound:
    """Depth-first search over slot subsets, containers in topological order."""

    def __init__(self, bid: Bid, state: MarketState, lo: int, hi: int):
        self.bid = bid
        self.state = state
        self.order = topological_order(bid.graph)
        before, after = path_slack(bid.graph)
        self.windows = {m: (lo + before[m], hi - after[m]) for m in self.order}
        self.need = [c.slots_required for c in bid.containers]
        self.demands = [c.demand_array() for c in bid.containers]
        self.preds = {m: bid.graph.predecessors(m) for m in self.order}
        # capacity-free lower bound material: feasible slots against the market alone
        self.static_costs = {
            m: sorted((c, t) for t, c in feasible_slots(bid.containers[m], self.windows[m], state))
            for m in self.order
        }
        self.placed: Dict[int, Tuple[int, ...]] = {}
        self.extra: Dict[int, np.ndarray] = {}
        self.best_cost = math.inf
        self.best: Optional[Dict[int, Tuple[int, ...]]] = None
        self.nodes = 0

    def _earliest(self, m: int) -> int:
        start = self.windows[m][0]
        for p in self.preds[m]:
            if p in self.placed:
                start = max(start, self.placed[p][-1] + 1)
        return start

    def _lower_bound(self, depth: int) -> float:
        total = 0.0
        for m in self.order[depth:]:
            start = self._earliest(m)
            picked = [c for c, t in self.static_costs[m] if t >= start][:self.need[m]]
            if len(picked) < self.need[m]:
                return math.inf
            total += sum(picked)
        return total

    def _limit(self) -> float:
        return min(self.best_cost, self.bid.price)

    def _subsets(self, costs: Sequence[float], count: int, offset: float) -> Iterator[Tuple[Tuple[int, ...], float]]:
        """Index subsets of ``costs`` (sorted ascending) whose sum keeps offset + sum below the limit."""
        chosen: List[int] = []

        def walk(start: int, left: int, subtotal: float):
            if left == 0:
                yield tuple(chosen), subtotal
                return
            for i in range(start, len(costs) - left + 1):
                if offset + subtotal + sum(costs[i:i + left]) >= self._limit():
                    break
                chosen.append(i)
                yield from walk(i + 1, left - 1, subtotal + costs[i])
                chosen.pop()

        yield from walk(0, count, 0.0)

    def search(self, depth: int = 0, partial: float = 0.0) -> None:
        if depth == len(self.order):
            if partial < self._limit():
                self.best_cost = partial
                self.best = dict(self.placed)
            return
        m = self.order[depth]
        window = (self._earliest(m), self.windows[m][1])
        candidates = feasible_slots(self.bid.containers[m], window, self.state, self.extra)
        if len(candidates) < self.need[m]:
            return
        candidates.sort(key=lambda pair: (pair[1], pair[0]))
        costs = [c for _, c in candidates]
        rest = self._lower_bound(depth + 1)
        if rest == math.inf:
            return

        for picks, subtotal in self._subsets(costs, self.need[m], partial + rest):
            slots = tuple(sorted(candidates[i][0] for i in picks))
            self.nodes += 1
            self.placed[m] = slots
            for t in slots:
                self.extra[t] = self.extra.get(t, 0.0) + self.demands[m]
            self.search(depth + 1, partial + subtotal)
            for t in slots:
                self.extra[t] = self.extra[t] - self.demands[m]
            del self.placed[m]


def schedule_general(bid: Bid, state: MarketState, theta: int, m_cap: int = DEFAULT_M_CAP) -> SchedulingResult:
    """
    Exact cheapest schedule for an arbitrary container DAG.

    Containers are placed in topological order. Each container's window is
    narrowed by the longest predecessor and successor paths and by the last
    slot of every placed predecessor. Candidate slot subsets come from
    ``feasible_slots`` with the job's own placed usage as ``extra``, cheapest
    first; a branch is cut once its cost plus a lower bound for the remaining
    containers reaches the incumbent or the bid price.

    Raises:
        SchedulerError: If the job has more than ``m_cap`` containers
    """
    if bid.graph.size > m_cap:
        raise SchedulerError(
            f"Bid {bid.id}: graph too large for exact search ({bid.graph.size} > {m_cap} containers)"
        )
    lo, hi = _job_window(bid, state, theta)
    if lo > hi or bid.graph.size == 0:
        return SchedulingResult.none()

    search = _BranchAndBound(bid, state, lo, hi)
    if any(w[1] - w[0] + 1 < search.need[m] for m, w in search.windows.items()):
        return SchedulingResult.none()
    search.search()
    logger.debug(f"Bid {bid.id}: DAG search explored {search.nodes} nodes")
    if search.best is None:
        return SchedulingResult.none(nodes=search.nodes)
    schedule = Schedule(tuple(search.best[m] for m in range(bid.graph.size)))
    return _result(bid, schedule, state, nodes=search.nodes)


def schedule_bid(bid: Bid, state: MarketState, theta: int, m_cap: int = DEFAULT_M_CAP) -> SchedulingResult:
    """Schedule a job with the chain DP when possible, the DAG search otherwise."""
    if is_chain(bid.graph):
        return schedule_chain(bid, state, theta)
    return schedule_general(bid, state, theta, m_cap)


def check_schedule(schedule: Schedule, bid: Bid, state: MarketState, theta: int) -> ValidationReport:
    """
    Verify a schedule against the window, precedence, slot count and capacity constraints.

    Capacity is checked for the schedule's own footprint added to the
    current allocation of ``state``.
    """
    found: List[Violation] = []
    if len(schedule.assignment) != bid.graph.size:
        found.append(Violation(
            "container",
            f"bid {bid.id}: schedule covers {len(schedule.assignment)} containers, job has {bid.graph.size}",
        ))
        return ValidationReport(tuple(found))

    lo = admission_time(bid, theta)
    for m, slots in enumerate(schedule.assignment):
        need = bid.containers[m].slots_required
        if len(slots) != need or len(set(slots)) != len(slots):
            found.append(Violation(
                "slot-count", f"bid {bid.id}, container {m + 1}: {len(set(slots))} distinct slots, needs {need}"
            ))
        outside = [t for t in slots if not 1 <= t <= state.horizon]
        if outside:
            found.append(Violation("horizon", f"bid {bid.id}, container {m + 1}: slots {outside} outside 1..{state.horizon}"))
        early_late = [t for t in slots if t < lo or t > bid.deadline]
        if early_late:
            found.append(Violation(
                "window", f"bid {bid.id}, container {m + 1}: slots {early_late} outside [{lo}, {bid.deadline}]"
            ))

    for a, b in sorted(bid.graph.edges):
        first, second = schedule.assignment[a], schedule.assignment[b]
        if first and second and max(first) >= min(second):
            found.append(Violation(
                "precedence", f"bid {bid.id}: container {b + 1} starts at {min(second)} before container {a + 1} ends at {max(first)}"
            ))

    for t, amounts in schedule.footprint(bid).items():
        if not 1 <= t <= state.horizon:
            continue
        total = state.allocated[t - 1] + amounts
        if np.any(total > state.capacities + CAPACITY_EPS):
            found.append(Violation("capacity", f"bid {bid.id}: slot {t} usage {total.tolist()} exceeds capacity"))

    return ValidationReport(tuple(found))
