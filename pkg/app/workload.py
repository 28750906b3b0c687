"""
Workloads for the auction: synthetic bid generation, cluster trace ingestion
and the batch interval calculator.

Synthetic bids arrive as a Poisson process per batch window. Each job gets a
service chain or a random DAG of containers with uniform slot counts and
demands, a deadline between the earliest possible completion and the end of
the horizon, and a price equal to a uniform unit value times its volume.

Trace CSV schema (header required)::

    job_id,arrival,duration,cpu,ram,disk
    1,3,2.5h,0.4,0.2,0.1

``duration`` is in hours, with an optional ``h`` suffix, and is quantised to
slots of ``slot_length`` hours by rounding up.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from scipy.stats import norm

from app.model import Bid, Container, ContainerGraph, longest_path_slots

logger = logging.getLogger("app.workload")

TRACE_COLUMNS = ("job_id", "arrival", "duration", "cpu", "ram", "disk")

SeedLike = Union[int, np.random.SeedSequence]


class WorkloadError(Exception):
    """
    Exception raised for unusable workload inputs.

    Raised for generator settings that can produce no job, malformed or empty
    trace files and batch interval inputs without a valid answer.
    """
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Knobs of the synthetic workload.

    Attributes:
        horizon: Number of slots T
        resources: Number of resource types R (CPU, RAM, Disk by default)
        capacity: Capacity per resource; the demand range must not exceed it
        density: Expected bids per batch window (Poisson rate)
        window: Length in slots of one arrival window
        slots_range: Inclusive range of slots per container
        demand_range: Range of per-slot demand per resource
        containers_range: Inclusive range of containers per job
        graph_shape: ``chain`` or ``random-dag``
        unit_value_range: Lower and upper value per unit of resource-slot
        edge_probability: Edge probability for random DAGs before transitive reduction
        max_bids: Keep only the earliest bids when set
        seed: Root seed or seed sequence
    """
    horizon: int
    resources: int = 3
    capacity: float = 50.0
    density: float = 10.0
    window: int = 4
    slots_range: Tuple[int, int] = (1, 10)
    demand_range: Tuple[float, float] = (0.0, 1.0)
    containers_range: Tuple[int, int] = (1, 4)
    graph_shape: str = "chain"
    unit_value_range: Tuple[float, float] = (1.0, 2.0)
    edge_probability: float = 0.3
    max_bids: Optional[int] = None
    seed: SeedLike = 0

    def __post_init__(self):
        checks = [
            (self.horizon >= 1, f"horizon must be at least 1, got {self.horizon}"),
            (self.resources >= 1, f"resources must be at least 1, got {self.resources}"),
            (self.density > 0, f"density must be positive, got {self.density}"),
            (self.window >= 1, f"window must be at least 1, got {self.window}"),
            (1 <= self.slots_range[0] <= self.slots_range[1], f"invalid slots range {self.slots_range}"),
            (0 <= self.demand_range[0] <= self.demand_range[1] and self.demand_range[1] > 0,
             f"invalid demand range {self.demand_range}"),
            (self.demand_range[1] <= self.capacity,
             f"demand range {self.demand_range} exceeds capacity {self.capacity}"),
            (1 <= self.containers_range[0] <= self.containers_range[1],
             f"invalid containers range {self.containers_range}"),
            (self.graph_shape in ("chain", "random-dag"), f"unknown graph shape '{self.graph_shape}'"),
            (0 < self.unit_value_range[0] <= self.unit_value_range[1],
             f"invalid unit value range {self.unit_value_range}"),
            (0 <= self.edge_probability <= 1, f"edge probability must lie in [0, 1], got {self.edge_probability}"),
        ]
        for ok, message in checks:
            if not ok:
                raise WorkloadError(f"Generator config: {message}")


def _root(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _child(root: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=root.entropy, spawn_key=tuple(root.spawn_key) + (index,))


def _demand(rng: np.random.Generator, cfg: GeneratorConfig) -> Tuple[float, ...]:
    lo, hi = cfg.demand_range
    while True:
        demand = rng.uniform(lo, hi, size=cfg.resources)
        if np.any(demand > 0):
            return tuple(float(h) for h in demand)


def _edges(rng: np.random.Generator, size: int, cfg: GeneratorConfig) -> frozenset:
    if cfg.graph_shape == "chain":
        return frozenset((m, m + 1) for m in range(size - 1))
    dag = nx.DiGraph()
    dag.add_nodes_from(range(size))
    for a in range(size):
        for b in range(a + 1, size):
            if rng.random() < cfg.edge_probability:
                dag.add_edge(a, b)
    return frozenset(nx.transitive_reduction(dag).edges())


def _price(rng: np.random.Generator, containers: Tuple[Container, ...], value_range: Tuple[float, float]) -> float:
    volume = sum(c.slots_required * sum(c.demand) for c in containers)
    return float(rng.uniform(*value_range) * volume)


def _job(rng: np.random.Generator, arrival: int, cfg: GeneratorConfig) -> Optional[Tuple[ContainerGraph, int, float]]:
    size = int(rng.integers(cfg.containers_range[0], cfg.containers_range[1] + 1))
    containers = tuple(
        Container(int(rng.integers(cfg.slots_range[0], cfg.slots_range[1] + 1)), _demand(rng, cfg))
        for _ in range(size)
    )
    graph = ContainerGraph(containers, _edges(rng, size, cfg))
    earliest = arrival + longest_path_slots(graph)
    if earliest > cfg.horizon:
        return None
    deadline = int(rng.integers(earliest, cfg.horizon + 1))
    return graph, deadline, _price(rng, containers, cfg.unit_value_range)


def generate_bids(cfg: GeneratorConfig) -> List[Bid]:
    """
    Draw a synthetic workload.

    Window j covers slots j*window+1 .. (j+1)*window and draws its own Poisson
    number of bids from a seed derived from the root seed and j, so windows
    are independent and reproducible. Jobs whose arrival plus longest path
    exceeds the horizon are skipped. Ids are assigned in (arrival, draw) order.

    Raises:
        WorkloadError: If the horizon is too short for any job
    """
    if cfg.horizon < 1 + cfg.slots_range[0]:
        raise WorkloadError(
            f"Horizon of {cfg.horizon} slots is too short for any job "
            f"(needs at least {1 + cfg.slots_range[0]})"
        )
    root = _root(cfg.seed)
    drawn: List[Tuple[int, int, ContainerGraph, int, float]] = []
    windows = math.ceil(cfg.horizon / cfg.window)
    for j in range(windows):
        rng = np.random.default_rng(_child(root, j))
        first, last = j * cfg.window + 1, min((j + 1) * cfg.window, cfg.horizon)
        count = int(rng.poisson(cfg.density))
        for _ in range(count):
            arrival = int(rng.integers(first, last + 1))
            job = _job(rng, arrival, cfg)
            if job is None:
                logger.debug(f"Window {j}: skipped job arriving at {arrival}, it cannot finish by {cfg.horizon}")
                continue
            drawn.append((arrival, len(drawn), *job))

    drawn.sort(key=lambda row: (row[0], row[1]))
    if cfg.max_bids is not None:
        drawn = drawn[:cfg.max_bids]
    bids = [
        Bid(id=i + 1, graph=graph, arrival=arrival, deadline=deadline, price=price)
        for i, (arrival, _, graph, deadline, price) in enumerate(drawn)
    ]
    logger.debug(f"Generated {len(bids)} bids over {cfg.horizon} slots")
    return bids


@dataclass(frozen=True)
class TraceMapping:
    """
    How trace jobs become bids.

    Attributes:
        horizon: Number of slots T
        slot_length: Hours per slot
        chain_split: Split each job into this many chained containers
        unit_value_range: Lower and upper value per unit of resource-slot
        seed: Seed for deadlines and prices
    """
    horizon: int
    slot_length: float = 1.0
    chain_split: int = 1
    unit_value_range: Tuple[float, float] = (1.0, 2.0)
    seed: SeedLike = 0


def _split(slots: int, parts: int) -> List[int]:
    parts = max(1, min(parts, slots))
    base, extra = divmod(slots, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


def _parse_duration(raw: str) -> float:
    text = raw.strip().lower()
    if text.endswith("h"):
        text = text[:-1]
    return float(text)


def load_trace(path: str, mapping: TraceMapping) -> List[Bid]:
    """
    Turn a cluster trace CSV into bids.

    Each row becomes one job: a single container, or a chain of
    ``chain_split`` containers sharing the slots, with the row's demands. The
    deadline is drawn uniformly from [arrival + slots, T] (T when the job
    cannot finish in time) and the price follows the generator rule.

    Raises:
        WorkloadError: If the file is missing or empty, or a row is malformed
            or has a negative or all-zero demand
    """
    if not os.path.exists(path):
        raise WorkloadError(f"Trace file not found at: {path}")
    rng = np.random.default_rng(_root(mapping.seed))
    bids: List[Bid] = []
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise WorkloadError(f"Trace file {path} is empty")
        missing = [c for c in TRACE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise WorkloadError(
                f"Trace file {path} lacks columns {', '.join(missing)}; expected header {','.join(TRACE_COLUMNS)}"
            )
        for row in reader:
            line = reader.line_num
            try:
                job_id = int(row["job_id"])
                arrival = int(row["arrival"])
                duration = _parse_duration(row["duration"])
                demand = tuple(float(row[c]) for c in ("cpu", "ram", "disk"))
            except (TypeError, ValueError) as e:
                raise WorkloadError(f"Trace file {path}, row {line}: malformed value ({e})")
            if duration <= 0:
                raise WorkloadError(f"Trace file {path}, row {line}: non-positive duration {row['duration']}")
            if any(h < 0 for h in demand):
                raise WorkloadError(f"Trace file {path}, row {line}: negative demand {list(demand)}")
            if not any(h > 0 for h in demand):
                raise WorkloadError(f"Trace file {path}, row {line}: demand has no positive component")
            if not 1 <= arrival <= mapping.horizon:
                raise WorkloadError(f"Trace file {path}, row {line}: arrival {arrival} outside 1..{mapping.horizon}")
            slots = math.ceil(duration / mapping.slot_length)
            containers = tuple(Container(n, demand) for n in _split(slots, mapping.chain_split))
            graph = ContainerGraph(containers, frozenset((m, m + 1) for m in range(len(containers) - 1)))
            earliest = arrival + slots
            deadline = int(rng.integers(earliest, mapping.horizon + 1)) if earliest <= mapping.horizon else mapping.horizon
            price = _price(rng, containers, mapping.unit_value_range)
            bids.append(Bid(id=job_id, graph=graph, arrival=arrival, deadline=deadline, price=price))
    if not bids:
        raise WorkloadError(f"Trace file {path} has a header but no jobs")
    logger.info(f"Loaded {len(bids)} jobs from trace {path}")
    return bids


@dataclass(frozen=True)
class NormalSpec:
    """Normal distribution N(mean, std^2)."""
    mean: float
    std: float


@dataclass(frozen=True)
class BatchInterval:
    """
    Recommended batch interval.

    Attributes:
        theta: Interval length in slots, at least 1
        clamped: True when no interval of at least one slot met the loss target
    """
    theta: int
    clamped: bool = False


def batch_interval(proc: NormalSpec, slack: NormalSpec, loss_target: float = 0.1) -> BatchInterval:
    """
    Longest batch interval keeping the expected job loss under ``loss_target``.

    With processing time W ~ N(a1, b1^2) and slack d - t ~ N(a2, b2^2), the
    waiting budget d - t - W is N(a2 - a1, b1^2 + b2^2). A job is lost when its
    budget is below theta, so theta = floor(mu + z * s) with z the
    ``loss_target`` quantile of the standard normal.

    Raises:
        WorkloadError: If a2 <= a1 or loss_target is outside (0, 1)
    """
    if slack.mean <= proc.mean:
        raise WorkloadError(
            f"Mean slack {slack.mean} does not exceed mean processing time {proc.mean}; jobs cannot complete on average"
        )
    if not 0 < loss_target < 1:
        raise WorkloadError(f"Loss target must lie in (0, 1), got {loss_target}")
    mu = slack.mean - proc.mean
    spread = math.hypot(proc.std, slack.std)
    raw = math.floor(mu + float(norm.ppf(loss_target)) * spread)
    if raw < 1:
        logger.warning(f"No batch interval meets loss target {loss_target} (raw theta {raw}); using 1")
        return BatchInterval(theta=1, clamped=True)
    return BatchInterval(theta=raw)


def workload_moments(bids: List[Bid]) -> Dict[str, NormalSpec]:
    """
    Empirical processing-time and slack distributions of a workload.

    Processing time is the longest-path slot count; slack is deadline - arrival.

    Returns:
        {"proc": NormalSpec, "slack": NormalSpec}

    Raises:
        WorkloadError: If there are no bids
    """
    if not bids:
        raise WorkloadError("Cannot estimate workload moments without bids")
    proc = np.array([longest_path_slots(b.graph) for b in bids], dtype=float)
    slack = np.array([b.deadline - b.arrival for b in bids], dtype=float)
    return {
        "proc": NormalSpec(float(proc.mean()), float(proc.std())),
        "slack": NormalSpec(float(slack.mean()), float(slack.std())),
    }
