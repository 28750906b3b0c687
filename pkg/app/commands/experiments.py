"""
Experiment commands: single runs, theta sweeps and competitive-ratio sweeps.

Every command turns an ExperimentSpec into a ResultTable. Work items
(sweep value, repetition) run sequentially or in a process pool; rows are
always assembled in (sweep value, repetition) order. The workload of
repetition ``rep`` is drawn from ``SeedSequence(entropy=seed, spawn_key=(rep,))``
so all sweep values of one repetition share the same random stream. ``run``
can sweep the bid density or the number of slots; its rows then start with
the swept setting.

Example:
    >>> spec = ExperimentSpec.from_config("run", Config(overrides={"reps": 3}))
    >>> table = cmd_run(spec)
    >>> write_table(table, "run.csv")
"""

import logging
import time
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from app.auction import run_batch_auction, run_fcfs_baseline
from app.commands.results import ResultTable
from app.config import Config, SpecError
from app.model import Bid, Violation, validate_bid
from app.oracle import OracleLimitError, OracleLimits, empirical_ratio, exact_opt, honest_sigma_ratio, occupation_ratio
from app.pricing import solve_k
from app.utils.events import EventLog
from app.utils.seeding import derive_seed
from app.workload import (
    GeneratorConfig,
    TraceMapping,
    WorkloadError,
    batch_interval,
    generate_bids,
    load_trace,
    workload_moments,
)

logger = logging.getLogger("app.commands.experiments")

COMMANDS = ("run", "sweep-theta", "ratio-sweep", "generate")
RUN_SWEEP_AXES = ("density", "slots")

RUN_COLUMNS = [
    "rep", "bids", "welfare_batch", "welfare_fcfs", "revenue_batch", "winner_fraction",
    "job_loss", "sigma_realized", "dual_objective",
]
THETA_COLUMNS = ["theta", "rep", "bids", "welfare", "winner_fraction", "job_loss", "recommended_theta"]
RATIO_COLUMNS = [
    "df_ratio", "reps", "ratio_mean", "ratio_max", "k_theory", "bound_min", "sigma_mean", "error",
]


@dataclass(frozen=True)
class ExperimentSpec:
    """
    One experiment invocation.

    Attributes:
        command: One of COMMANDS
        config: Merged settings (slots, theta, density, reps, seed, ...)
        source: ``generate`` or ``trace``
        sweep_values: Values of the swept axis (theta, D/F ratio, density or slots)
        sweep_axis: Setting swept by ``run``, one of RUN_SWEEP_AXES, or None
        timing: Add a runtime_ms column
        oracle: Add an exact-optimum ratio column to ``run``

    Raises:
        SpecError: If the workload source or the sweep values are invalid
    """
    command: str
    config: Config
    source: str = "generate"
    sweep_values: Tuple[float, ...] = ()
    sweep_axis: Optional[str] = None
    timing: bool = False
    oracle: bool = False
    limits: OracleLimits = field(default_factory=OracleLimits)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise SpecError(f"Unknown command '{self.command}', expected one of {', '.join(COMMANDS)}")
        if self.source not in ("generate", "trace"):
            raise SpecError(f"Workload source must be 'generate' or 'trace', got '{self.source}'")
        if self.source == "trace" and not self.config.get("trace"):
            raise SpecError("Trace source selected but no trace path given; pass --trace PATH")
        if self.source == "generate" and self.config.get("trace"):
            raise SpecError("Give exactly one workload source: --trace PATH or --generate, not both")
        if self.command in ("sweep-theta", "ratio-sweep") and not self.sweep_values:
            raise SpecError(f"{self.command} needs at least one sweep value")
        if self.command == "sweep-theta" and any(v < 1 or v != int(v) for v in self.sweep_values):
            raise SpecError(f"Theta values must be integers >= 1, got {list(self.sweep_values)}")
        if self.command == "ratio-sweep" and any(v < 1 for v in self.sweep_values):
            raise SpecError(f"D/F ratios must be at least 1, got {list(self.sweep_values)}")
        if self.command == "run":
            self._check_run_sweep()
        elif self.sweep_axis is not None:
            raise SpecError(f"Only run takes a sweep axis, {self.command} sweeps its own")

    def _check_run_sweep(self) -> None:
        if self.sweep_axis is None:
            if self.sweep_values:
                raise SpecError("Sweep values given without an axis; pass --sweep density or --sweep slots")
            return
        if self.sweep_axis not in RUN_SWEEP_AXES:
            raise SpecError(f"Unknown sweep axis '{self.sweep_axis}', expected one of {', '.join(RUN_SWEEP_AXES)}")
        if not self.sweep_values:
            raise SpecError(f"Sweeping {self.sweep_axis} needs at least one value; pass --values")
        if self.sweep_axis == "density" and any(v <= 0 for v in self.sweep_values):
            raise SpecError(f"Densities must be positive, got {list(self.sweep_values)}")
        if self.sweep_axis == "slots" and any(v < 1 or v != int(v) for v in self.sweep_values):
            raise SpecError(f"Slot counts must be integers >= 1, got {list(self.sweep_values)}")

    @classmethod
    def from_config(cls, command: str, config: Config, sweep_values=(), **kwargs) -> "ExperimentSpec":
        source = "trace" if config.get("trace") else "generate"
        return cls(command=command, config=config, source=source,
                   sweep_values=tuple(float(v) for v in sweep_values), **kwargs)

    @property
    def reps(self) -> int:
        return self.config.get("reps")

    @property
    def seed(self) -> int:
        return self.config.get("seed")

    def axis_value(self, value: float) -> Any:
        return int(value) if self.sweep_axis == "slots" else value

    def at(self, value: float) -> "ExperimentSpec":
        """This run with its swept setting fixed to ``value``."""
        config = self.config.with_values(**{self.sweep_axis: self.axis_value(value)})
        return replace(self, config=config, sweep_axis=None, sweep_values=())

    def columns(self, base: List[str]) -> List[str]:
        columns = list(base)
        if self.command == "run" and self.sweep_axis:
            columns.insert(0, self.sweep_axis)
        if self.command == "run" and self.oracle:
            columns.append("ratio")
        if self.timing:
            columns.append("runtime_ms")
        return columns


def generator_config(config: Config, seed: Any, unit_value_range: Optional[Tuple[float, float]] = None) -> GeneratorConfig:
    return GeneratorConfig(
        horizon=config.get("slots"),
        resources=config.get("resources"),
        capacity=config.get("capacity"),
        density=config.get("density"),
        window=config.get("window"),
        slots_range=(config.get("task_slots_min"), config.get("task_slots_max")),
        demand_range=(config.get("demand_min"), 1.0),
        containers_range=(config.get("containers_min"), config.get("containers_max")),
        graph_shape=config.get("graph_shape"),
        unit_value_range=unit_value_range or config.unit_value_range(),
        max_bids=config.get("max_bids"),
        seed=seed,
    )


def _check_workload(bids: List[Bid], config: Config) -> None:
    """
    Reject workloads with structurally invalid bids.

    Bids whose window is too short for their longest path are kept; the
    auction rejects them.

    Raises:
        WorkloadError: If any bid violates another invariant
    """
    problems: List[Violation] = []
    never_feasible = 0
    for bid in bids:
        for violation in validate_bid(bid, config.get("slots"), config.get("resources")).violations:
            if violation.code == "never-feasible":
                never_feasible += 1
            else:
                problems.append(violation)
    if never_feasible:
        logger.info(f"{never_feasible} bid(s) cannot finish before their deadline")
    if problems:
        shown = "; ".join(v.message for v in problems[:5])
        more = f" (and {len(problems) - 5} more)" if len(problems) > 5 else ""
        raise WorkloadError(f"Workload has {len(problems)} problem(s): {shown}{more}")


def load_workload(spec: ExperimentSpec, rep: int, unit_value_range: Optional[Tuple[float, float]] = None) -> List[Bid]:
    """
    Bids of repetition ``rep``, generated or loaded from the trace.

    Raises:
        WorkloadError: If the workload cannot be produced or holds an invalid bid
    """
    config = spec.config
    seed = derive_seed(spec.seed, rep)
    if spec.source == "trace":
        mapping = TraceMapping(
            horizon=config.get("slots"),
            slot_length=config.get("slot_length"),
            chain_split=config.get("chain_split"),
            unit_value_range=unit_value_range or config.unit_value_range(),
            seed=seed,
        )
        bids = load_trace(config.get("trace"), mapping)
    else:
        bids = generate_bids(generator_config(config, seed, unit_value_range))
    _check_workload(bids, config)
    return bids


def _auction_config(spec: ExperimentSpec, bids: List[Bid], theta: Optional[int] = None):
    config = spec.config
    params = config.pricing_settings().resolve(bids, config.get("resources"))
    return config.auction_config(params, theta=theta)


def _elapsed_ms(start: float) -> float:
    return round((time.perf_counter() - start) * 1000.0, 3)


def _map(fn: Callable, tasks: List[Tuple], workers: int) -> List[Any]:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(fn, tasks)


def _run_rep(task: Tuple[ExperimentSpec, Optional[float], int, bool]) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    spec, value, rep, record_events = task
    start = time.perf_counter()
    context: Dict[str, Any] = {"rep": rep}
    row: Dict[str, Any] = {}
    if value is not None:
        row[spec.sweep_axis] = context[spec.sweep_axis] = spec.axis_value(value)
        spec = spec.at(value)
    bids = load_workload(spec, rep)
    auction_config = _auction_config(spec, bids)
    events = EventLog(context={**context, "run": "batch"}) if record_events else None
    batch = run_batch_auction(bids, auction_config, events)
    fcfs_events = EventLog(context={**context, "run": "fcfs"}) if record_events else None
    fcfs = run_fcfs_baseline(bids, auction_config, fcfs_events)
    row.update({
        "rep": rep,
        "bids": len(bids),
        "welfare_batch": batch.social_welfare,
        "welfare_fcfs": fcfs.social_welfare,
        "revenue_batch": batch.revenue,
        "winner_fraction": batch.winner_fraction,
        "job_loss": batch.job_loss,
        "sigma_realized": occupation_ratio(batch),
        "dual_objective": batch.dual_objective,
    })
    if spec.oracle:
        try:
            row["ratio"] = empirical_ratio(bids, auction_config, spec.limits, outcome=batch)
        except OracleLimitError as e:
            logger.info(f"Rep {rep}: no ratio, {e}")
            row["ratio"] = None
    if spec.timing:
        row["runtime_ms"] = _elapsed_ms(start)
    records: List[Dict[str, Any]] = []
    if record_events:
        records = events.records + fcfs_events.records
    return row, records


def _merge_events(results: List[Tuple[Dict[str, Any], List[Dict[str, Any]]]], path: Optional[str]) -> None:
    if not path:
        return
    merged = EventLog()
    for _, records in results:
        merged.extend(records)
    merged.write_jsonl(path)
    logger.info(f"Wrote {len(merged.records)} events to {path}")


def cmd_run(spec: ExperimentSpec) -> ResultTable:
    """
    Batch auction against the FCFS baseline, one row per repetition.

    With a sweep axis there is one row per (value, repetition), ordered by
    value and then repetition, and the first column holds the value.

    Raises:
        ConfigError: If price bounds cannot be resolved for a workload
        WorkloadError: If the workload cannot be generated or loaded
    """
    events_path = spec.config.get("events")
    values = sorted(spec.sweep_values) if spec.sweep_axis else [None]
    tasks = [(spec, value, rep, bool(events_path)) for value in values for rep in range(spec.reps)]
    results = _map(_run_rep, tasks, spec.config.get("workers"))
    table = ResultTable(columns=spec.columns(RUN_COLUMNS))
    for row, _ in results:
        table.add(row)
    _merge_events(results, events_path)
    if spec.sweep_axis:
        logger.info(f"run: {len(values)} {spec.sweep_axis} values x {spec.reps} repetitions")
    else:
        logger.info(f"run: {len(table.rows)} repetitions")
    return table


def _recommended_theta(bids: List[Bid], loss_target: float) -> Optional[int]:
    if not bids:
        return None
    moments = workload_moments(bids)
    try:
        return batch_interval(moments["proc"], moments["slack"], loss_target).theta
    except WorkloadError as e:
        logger.info(f"No recommended theta: {e}")
        return None


def _theta_rep(task: Tuple[ExperimentSpec, int]) -> List[Dict[str, Any]]:
    spec, rep = task
    bids = load_workload(spec, rep)
    recommended = _recommended_theta(bids, spec.config.get("loss_target"))
    base = _auction_config(spec, bids)
    rows = []
    for value in spec.sweep_values:
        start = time.perf_counter()
        theta = int(value)
        outcome = run_batch_auction(bids, base.with_theta(theta))
        row: Dict[str, Any] = {
            "theta": theta,
            "rep": rep,
            "bids": len(bids),
            "welfare": outcome.social_welfare,
            "winner_fraction": outcome.winner_fraction,
            "job_loss": outcome.job_loss,
            "recommended_theta": recommended,
        }
        if spec.timing:
            row["runtime_ms"] = _elapsed_ms(start)
        rows.append(row)
    return rows


def cmd_sweep_theta(spec: ExperimentSpec) -> ResultTable:
    """
    Welfare and winner fraction per batch interval, one row per (theta, rep).

    Each row also carries the batch interval recommended for the repetition's
    workload from its empirical processing-time and slack moments.
    """
    per_rep = _map(_theta_rep, [(spec, rep) for rep in range(spec.reps)], spec.config.get("workers"))
    rows = [row for rows in per_rep for row in rows]
    rows.sort(key=lambda r: (r["theta"], r["rep"]))
    table = ResultTable(columns=spec.columns(THETA_COLUMNS))
    for row in rows:
        table.add(row)
    logger.info(f"sweep-theta: {len(spec.sweep_values)} values x {spec.reps} repetitions")
    return table


def _ratio_cell(task: Tuple[ExperimentSpec, float, int]) -> Dict[str, Any]:
    spec, df_ratio, rep = task
    start = time.perf_counter()
    bids = load_workload(spec, rep, unit_value_range=(1.0, df_ratio))
    try:
        auction_config = _auction_config(spec, bids)
        optimum = exact_opt(bids, auction_config, spec.limits)
        honest = honest_sigma_ratio(bids, auction_config, spec.limits, optimum=optimum)
    except OracleLimitError as e:
        logger.warning(f"D/F {df_ratio}, rep {rep}: {e}")
        return {"error": "oracle-limit", "elapsed": _elapsed_ms(start)}
    return {"ratio": honest.ratio, "bound": honest.bound, "sigma": honest.sigma, "elapsed": _elapsed_ms(start)}


def cmd_ratio_sweep(spec: ExperimentSpec) -> ResultTable:
    """
    Empirical competitive ratio per D/F ratio against the theoretical coefficient.

    For every D/F value and repetition the batch auction is compared with the
    exact optimum after re-pricing with the realised occupation rate. A row
    aggregates mean and max ratio over repetitions together with k solved for
    D/F over the configured sigma. Rows with an instance beyond the oracle
    limits are marked ``error=oracle-limit``; the sweep continues.
    """
    tasks = [(spec, value, rep) for value in spec.sweep_values for rep in range(spec.reps)]
    cells = _map(_ratio_cell, tasks, spec.config.get("workers"))
    sigma = spec.config.get("sigma")
    table = ResultTable(columns=spec.columns(RATIO_COLUMNS))
    for i, value in enumerate(spec.sweep_values):
        group = cells[i * spec.reps:(i + 1) * spec.reps]
        ok = [c for c in group if "error" not in c]
        varpi = value / sigma
        row: Dict[str, Any] = {
            "df_ratio": value,
            "reps": len(ok),
            "k_theory": solve_k(varpi) if varpi > 1 else None,
            "error": "oracle-limit" if len(ok) < len(group) else None,
        }
        if ok:
            ratios = np.array([c["ratio"] for c in ok], dtype=float)
            row["ratio_mean"] = float(np.mean(ratios))
            row["ratio_max"] = float(np.max(ratios))
            row["bound_min"] = min(c["bound"] for c in ok)
            row["sigma_mean"] = float(np.mean([c["sigma"] for c in ok]))
        if spec.timing:
            row["runtime_ms"] = round(sum(c["elapsed"] for c in group), 3)
        table.add(row)
    if table.errors:
        logger.warning(f"ratio-sweep: {table.errors} row(s) hit the oracle limits")
    return table


def cmd_generate(spec: ExperimentSpec) -> List[Bid]:
    """Workload of repetition 0, for writing to a bid file."""
    return load_workload(spec, 0)

