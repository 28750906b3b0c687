"""
Domain types for the container auction: bids, container graphs, schedules and
market state, plus the structural validation shared by every other module.

Slots are integers 1..T. Container indices are 0-based in memory and 1-based in
the JSON bid format.

Example:
    >>> from app.model import Bid, Container, ContainerGraph, admission_time
    >>> graph = ContainerGraph((Container(2, (1.0, 0.5)), Container(1, (0.2, 0.2))), {(0, 1)})
    >>> bid = Bid(id=1, graph=graph, arrival=5, deadline=20, price=12.0)
    >>> admission_time(bid, theta=4)
    8
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np

from app.pricing import PriceParams, price_curve

logger = logging.getLogger("app.model")

# Capacity comparisons tolerate float accumulation error.
CAPACITY_EPS = 1e-9

ResourceVector = Tuple[float, ...]


class ModelError(Exception):
    """
    Exception raised for malformed domain data.

    Raised when a container graph is not a DAG where one is required, or when
    a bid file cannot be parsed into bids.
    """
    pass


@dataclass(frozen=True)
class Violation:
    """One violated invariant: a short machine code and a readable message."""
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """
    Outcome of a validation pass.

    Attributes:
        violations: Every violated invariant, in discovery order
    """
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


@dataclass(frozen=True)
class Container:
    """
    One sub-task of a job, served by one container.

    Attributes:
        slots_required: Number of (not necessarily contiguous) slots N_im
        demand: Per-slot resource demand h^r_im, one entry per resource type
    """
    slots_required: int
    demand: ResourceVector

    def demand_array(self) -> np.ndarray:
        return np.asarray(self.demand, dtype=float)


@dataclass(frozen=True)
class ContainerGraph:
    """
    Dependence graph of a job's sub-tasks.

    Attributes:
        containers: Containers indexed 0..M-1
        edges: (pred, succ) index pairs; pred must finish before succ starts
    """
    containers: Tuple[Container, ...]
    edges: FrozenSet[Tuple[int, int]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "containers", tuple(self.containers))
        object.__setattr__(self, "edges", frozenset((int(a), int(b)) for a, b in self.edges))

    @property
    def size(self) -> int:
        return len(self.containers)

    def predecessors(self, m: int) -> List[int]:
        return sorted(a for a, b in self.edges if b == m)

    def successors(self, m: int) -> List[int]:
        return sorted(b for a, b in self.edges if a == m)

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.size))
        graph.add_edges_from(sorted(self.edges))
        return graph


@dataclass(frozen=True)
class Bid:
    """
    A user's job bid: container graph, arrival slot, deadline slot and price.

    Attributes:
        id: Bid identifier, unique within a workload
        graph: Container dependence graph with slot counts and demands
        arrival: Arrival slot t_i
        deadline: Last usable slot d_i
        price: Bidding price
    """
    id: int
    graph: ContainerGraph
    arrival: int
    deadline: int
    price: float

    @property
    def containers(self) -> Tuple[Container, ...]:
        return self.graph.containers


@dataclass(frozen=True)
class Schedule:
    """
    Slot assignment of a job: entry m holds the sorted slots of container m.

    The induced footprint at slot t is the sum of the demands of every
    container scheduled at t.
    """
    assignment: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "assignment", tuple(tuple(sorted(int(t) for t in slots)) for slots in self.assignment)
        )

    def slots(self) -> List[int]:
        """All slots used by at least one container, ascending."""
        return sorted({t for slots in self.assignment for t in slots})

    def footprint(self, bid: Bid) -> Dict[int, np.ndarray]:
        """Per-slot resource usage of this schedule for ``bid``: summed demands of the containers in each slot."""
        usage: Dict[int, np.ndarray] = {}
        for m, slots in enumerate(self.assignment):
            demand = bid.containers[m].demand_array()
            for t in slots:
                if t in usage:
                    usage[t] = usage[t] + demand
                else:
                    usage[t] = demand.copy()
        return dict(sorted(usage.items()))

    def to_dict(self) -> Dict[str, List[int]]:
        return {str(m + 1): list(slots) for m, slots in enumerate(self.assignment)}


@dataclass(eq=False)
class MarketState:
    """
    Posted-price market: allocated amounts w_r(t) and marginal prices k_r(t).

    Row ``t - 1`` of ``allocated`` and ``prices`` describes slot ``t``. Prices
    are recomputed from the allocation on every mutation.

    Attributes:
        horizon: Number of slots T
        capacities: Capacity C_r per resource
        params: Price curve parameters
        allocated: T x R matrix of allocated amounts
        prices: T x R matrix of marginal prices
    """
    horizon: int
    capacities: np.ndarray
    params: PriceParams
    allocated: np.ndarray = field(default=None)
    prices: np.ndarray = field(default=None)

    def __post_init__(self):
        self.capacities = np.asarray(self.capacities, dtype=float)
        if self.allocated is None:
            self.allocated = np.zeros((self.horizon, len(self.capacities)))
        self.prices = price_curve(self.allocated, self.params, self.capacities)

    @classmethod
    def empty(cls, horizon: int, capacities: Sequence[float], params: PriceParams) -> "MarketState":
        return cls(horizon=horizon, capacities=np.asarray(capacities, dtype=float), params=params)

    @property
    def resources(self) -> int:
        return len(self.capacities)

    def remaining(self, slot: int) -> np.ndarray:
        return self.capacities - self.allocated[slot - 1]

    def allocate(self, slot: int, amounts: np.ndarray) -> None:
        """
        Add ``amounts`` to the allocation of ``slot`` and reprice that slot.

        Raises:
            ModelError: If the slot is outside the horizon or capacity would be exceeded
        """
        if not 1 <= slot <= self.horizon:
            raise ModelError(f"Slot {slot} is outside the horizon 1..{self.horizon}")
        updated = self.allocated[slot - 1] + amounts
        if np.any(updated > self.capacities + CAPACITY_EPS):
            raise ModelError(
                f"Allocation at slot {slot} would exceed capacity: "
                f"{updated.tolist()} > {self.capacities.tolist()}"
            )
        self.allocated[slot - 1] = np.minimum(updated, self.capacities)
        self.prices[slot - 1] = price_curve(self.allocated[slot - 1], self.params, self.capacities)


def admission_time(bid: Bid, theta: int) -> int:
    """
    Earliest usable slot of a batched bid: theta * ceil(arrival / theta).

    Args:
        bid: The bid
        theta: Batch interval length, at least 1

    Returns:
        The last slot of the batch that collects the bid
    """
    if theta < 1:
        raise ModelError(f"Batch interval must be at least 1, got {theta}")
    return theta * (-(-bid.arrival // theta))


def topological_order(graph: ContainerGraph) -> List[int]:
    """
    Deterministic topological order of the containers, ties broken by index.

    Raises:
        ModelError: If the graph has a directed cycle ("not a DAG")
    """
    try:
        return list(nx.lexicographical_topological_sort(graph.to_networkx()))
    except nx.NetworkXUnfeasible:
        raise ModelError("Container graph is not a DAG")


def is_chain(graph: ContainerGraph) -> bool:
    """True iff the graph is a single directed path through every container."""
    if graph.size <= 1:
        return not graph.edges
    if len(graph.edges) != graph.size - 1:
        return False
    dag = graph.to_networkx()
    if not nx.is_directed_acyclic_graph(dag):
        return False
    return all(dag.in_degree(m) <= 1 and dag.out_degree(m) <= 1 for m in dag.nodes)


def path_slack(graph: ContainerGraph) -> Tuple[List[int], List[int]]:
    """
    Longest-path slot sums around each container.

    Returns:
        (before, after): before[m] is the largest total slots_required along a
        path ending just before m, after[m] the same for paths starting just after m.
    """
    order = topological_order(graph)
    need = [c.slots_required for c in graph.containers]
    before = [0] * graph.size
    after = [0] * graph.size
    for m in order:
        for p in graph.predecessors(m):
            before[m] = max(before[m], before[p] + need[p])
    for m in reversed(order):
        for s in graph.successors(m):
            after[m] = max(after[m], after[s] + need[s])
    return before, after


def longest_path_slots(graph: ContainerGraph) -> int:
    """Total slots_required along the heaviest path of the graph."""
    if graph.size == 0:
        return 0
    before, _ = path_slack(graph)
    return max(before[m] + graph.containers[m].slots_required for m in range(graph.size))


def validate_bid(bid: Bid, horizon: int, resources: int, theta: int = 1) -> ValidationReport:
    """
    Check every structural invariant of a bid and its container graph.

    Args:
        bid: Bid to check
        horizon: Number of slots T
        resources: Number of resource types R
        theta: Batch interval used for the never-feasible check

    Returns:
        ValidationReport listing every violation; ``ok`` iff there is none
    """
    found: List[Violation] = []

    if not 1 <= bid.arrival <= horizon:
        found.append(Violation("arrival", f"bid {bid.id}: arrival {bid.arrival} outside 1..{horizon}"))
    if bid.deadline < bid.arrival:
        found.append(Violation("deadline", f"bid {bid.id}: deadline {bid.deadline} before arrival {bid.arrival}"))
    if bid.deadline > horizon:
        found.append(Violation("deadline", f"bid {bid.id}: deadline {bid.deadline} beyond horizon {horizon}"))
    if not bid.price > 0:
        found.append(Violation("price", f"bid {bid.id}: price must be positive, got {bid.price}"))
    if bid.graph.size == 0:
        found.append(Violation("slots", f"bid {bid.id}: job has no containers"))

    for m, container in enumerate(bid.containers):
        label = f"bid {bid.id}, container {m + 1}"
        if container.slots_required < 1:
            found.append(Violation("slots", f"{label}: slots_required must be >= 1"))
        if len(container.demand) != resources:
            found.append(Violation("demand", f"{label}: expected {resources} demand entries, got {len(container.demand)}"))
        if any(h < 0 for h in container.demand):
            found.append(Violation("demand", f"{label}: negative demand {list(container.demand)}"))
        elif not any(h > 0 for h in container.demand):
            found.append(Violation("demand", f"{label}: demand has no positive component"))

    structure_ok = True
    for a, b in sorted(bid.graph.edges):
        if a == b:
            found.append(Violation("self-edge", f"bid {bid.id}: self-edge on container {a + 1}"))
            structure_ok = False
        elif not (0 <= a < bid.graph.size and 0 <= b < bid.graph.size):
            found.append(Violation("edge", f"bid {bid.id}: edge ({a + 1}, {b + 1}) has an invalid endpoint"))
            structure_ok = False

    if structure_ok:
        if not nx.is_directed_acyclic_graph(bid.graph.to_networkx()):
            found.append(Violation("cycle", f"bid {bid.id}: container graph has a cycle"))
        elif bid.graph.size and theta >= 1:
            window = bid.deadline - admission_time(bid, theta) + 1
            longest = longest_path_slots(bid.graph)
            if longest > window:
                found.append(Violation(
                    "never-feasible",
                    f"bid {bid.id}: longest path needs {longest} slots but the window has {max(window, 0)}",
                ))

    return ValidationReport(tuple(found))


def bid_from_dict(data: Dict[str, Any]) -> Bid:
    """
    Build a bid from its JSON form (1-based container indices).

    Raises:
        ModelError: If a required key is missing or has the wrong shape
    """
    try:
        containers = tuple(
            Container(int(c["slots"]), tuple(float(h) for h in c["demand"]))
            for c in data["containers"]
        )
        edges = frozenset((int(a) - 1, int(b) - 1) for a, b in data.get("edges", []))
        return Bid(
            id=int(data["id"]),
            graph=ContainerGraph(containers, edges),
            arrival=int(data["arrival"]),
            deadline=int(data["deadline"]),
            price=float(data["price"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(
            f"Malformed bid entry {data!r}: {e}. Expected keys id, arrival, deadline, price, "
            "containers=[{slots, demand}], edges=[[pred, succ], ...]"
        )


def bid_to_dict(bid: Bid) -> Dict[str, Any]:
    return {
        "id": bid.id,
        "arrival": bid.arrival,
        "deadline": bid.deadline,
        "price": bid.price,
        "containers": [
            {"slots": c.slots_required, "demand": list(c.demand)} for c in bid.containers
        ],
        "edges": [[a + 1, b + 1] for a, b in sorted(bid.graph.edges)],
    }


def load_bids(path: str) -> List[Bid]:
    """
    Read a bid file: a JSON array of bid objects.

    Raises:
        ModelError: If the file is missing, not valid JSON or holds malformed bids
    """
    if not os.path.exists(path):
        raise ModelError(f"Bid file not found at: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelError(
            f"Failed to parse bid file {path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        )
    if not isinstance(data, list):
        raise ModelError(f"Bid file {path} must contain a JSON array of bids")
    bids = [bid_from_dict(entry) for entry in data]
    logger.debug(f"Loaded {len(bids)} bids from {path}")
    return bids


def dump_bids(bids: Iterable[Bid], path: str) -> None:
    with open(path, "w") as f:
        json.dump([bid_to_dict(b) for b in bids], f, indent=2)
        f.write("\n")
