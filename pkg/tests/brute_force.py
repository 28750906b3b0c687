"""
Exhaustive reference enumerators and small-instance builders for tests.

Everything here is deliberately naive: it enumerates every slot subset of
every container (and, for the optimum, every subset of bids) so results can
be compared with the real schedulers and the oracle.
"""

import itertools
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.model import (
    CAPACITY_EPS,
    Bid,
    Container,
    ContainerGraph,
    MarketState,
    Schedule,
    admission_time,
    longest_path_slots,
    topological_order,
)
from app.pricing import PriceParams, schedule_cost


def all_schedules(bid: Bid, horizon: int, theta: int) -> List[Schedule]:
    """
    Every schedule meeting window, slot-count and strict precedence constraints, ignoring capacity.

    Containers are placed in topological order and each one only after all of
    its predecessors have finished, so nothing that breaks precedence is built.
    """
    lo, hi = admission_time(bid, theta), min(bid.deadline, horizon)
    if lo > hi:
        return []
    order = topological_order(bid.graph)
    chosen = {}
    found = []

    def place(idx):
        if idx == len(order):
            found.append(Schedule(tuple(chosen[m] for m in range(bid.graph.size))))
            return
        m = order[idx]
        start = max([lo] + [chosen[p][-1] + 1 for p in bid.graph.predecessors(m)])
        for combo in itertools.combinations(range(start, hi + 1), bid.containers[m].slots_required):
            chosen[m] = combo
            place(idx + 1)
        chosen.pop(m, None)

    place(0)
    return found


def fits(schedule: Schedule, bid: Bid, allocated: np.ndarray, capacities: np.ndarray) -> bool:
    for t, amounts in schedule.footprint(bid).items():
        if np.any(allocated[t - 1] + amounts > capacities + CAPACITY_EPS):
            return False
    return True


def brute_min_cost(bid: Bid, state: MarketState, theta: int) -> Tuple[float, Optional[Schedule]]:
    """Cheapest capacity-feasible schedule by full enumeration."""
    best, best_schedule = math.inf, None
    for schedule in all_schedules(bid, state.horizon, theta):
        if not fits(schedule, bid, state.allocated, state.capacities):
            continue
        cost = schedule_cost(schedule, bid, state)
        if cost < best:
            best, best_schedule = cost, schedule
    return best, best_schedule


def brute_opt(bids: Sequence[Bid], horizon: int, capacities: Sequence[float], theta: int) -> float:
    """Optimal welfare by enumerating bid subsets and joint schedules."""
    capacities = np.asarray(capacities, dtype=float)
    options = {b.id: all_schedules(b, horizon, theta) for b in bids}
    best = 0.0
    for size in range(len(bids), 0, -1):
        for subset in itertools.combinations(bids, size):
            welfare = sum(b.price for b in subset)
            if welfare <= best:
                continue
            if _jointly_feasible(list(subset), options, np.zeros((horizon, len(capacities))), capacities):
                best = welfare
    return best


def _jointly_feasible(bids: List[Bid], options, allocated: np.ndarray, capacities: np.ndarray) -> bool:
    if not bids:
        return True
    bid, rest = bids[0], bids[1:]
    for schedule in options[bid.id]:
        if not fits(schedule, bid, allocated, capacities):
            continue
        footprint = schedule.footprint(bid)
        for t, amounts in footprint.items():
            allocated[t - 1] += amounts
        ok = _jointly_feasible(rest, options, allocated, capacities)
        for t, amounts in footprint.items():
            allocated[t - 1] -= amounts
        if ok:
            return True
    return False


def random_bid(
    rng: np.random.Generator,
    bid_id: int,
    horizon: int,
    size: int,
    shape: str = "chain",
    max_slots: int = 3,
    resources: int = 2,
    price: Optional[float] = None,
) -> Bid:
    """A random bid whose longest path fits its window."""
    while True:
        containers = tuple(
            Container(int(rng.integers(1, max_slots + 1)), tuple(float(x) for x in rng.uniform(0.1, 1.0, resources)))
            for _ in range(size)
        )
        if shape == "chain":
            edges = frozenset((m, m + 1) for m in range(size - 1))
        else:
            edges = frozenset((a, b) for a in range(size) for b in range(a + 1, size) if rng.random() < 0.4)
        graph = ContainerGraph(containers, edges)
        need = longest_path_slots(graph)
        if need > horizon:
            continue
        arrival = int(rng.integers(1, horizon - need + 2))
        deadline = int(rng.integers(arrival + need - 1, horizon + 1))
        value = price if price is not None else float(rng.uniform(1.0, 3.0) * sum(c.slots_required * sum(c.demand) for c in containers))
        return Bid(id=bid_id, graph=graph, arrival=arrival, deadline=deadline, price=value)


def random_market(rng: np.random.Generator, horizon: int, resources: int = 2, capacity: float = 2.0) -> MarketState:
    """A market with random prior allocation so prices and capacity vary across slots."""
    params = PriceParams.from_bounds((3.0,) * resources, (1.0,) * resources, sigma=0.9)
    state = MarketState.empty(horizon, (capacity,) * resources, params)
    for t in range(1, horizon + 1):
        state.allocate(t, rng.uniform(0.0, capacity * 0.9, resources))
    return state
