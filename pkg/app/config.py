"""
Configuration loading for the container auction simulator.

Settings are merged from four sources, later ones winning: built-in defaults,
a ``.env`` file, an optional JSON config file and explicit overrides (the CLI
flags). File keys equal the long flag names with ``-`` replaced by ``_``.

Environment Variables:
    LOG_LEVEL: Logging verbosity (default: INFO)
    AUCTION_CONFIG_PATH: Path to a JSON config file (optional)

Example:
    >>> from app.config import Config
    >>> config = Config(overrides={"theta": 6})
    >>> config.get("theta")
    6
    >>> params = config.pricing_settings().resolve(bids, config.get("resources"))
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, Optional, Tuple

from dotenv import load_dotenv

from app.pricing import PriceParams, PricingError, estimate_bounds

logger = logging.getLogger("app.config")

DEFAULTS: Dict[str, Any] = {
    "slots": 200,
    "theta": 4,
    "density": 10.0,
    "capacity": 50.0,
    "resources": 3,
    "sigma": 0.9,
    "k": None,
    "price_bounds_mode": "estimate",
    "D": None,
    "F": None,
    "df_ratio": 2.0,
    "reps": 10,
    "seed": 1,
    "max_containers_exact": 8,
    "graph_shape": "chain",
    "containers_min": 1,
    "containers_max": 4,
    "task_slots_min": 1,
    "task_slots_max": 10,
    "demand_min": 0.0,
    "window": 4,
    "max_bids": None,
    "loss_target": 0.1,
    "trace": None,
    "slot_length": 1.0,
    "chain_split": 1,
    "workers": 1,
    "events": None,
    "out": None,
    "format": "csv",
    "log_level": None,
}

_INT_KEYS = {
    "slots", "theta", "resources", "reps", "seed", "max_containers_exact", "containers_min",
    "containers_max", "task_slots_min", "task_slots_max", "window", "max_bids", "chain_split", "workers",
}
_FLOAT_KEYS = {"density", "capacity", "sigma", "k", "df_ratio", "loss_target", "slot_length", "demand_min"}
_CHOICES = {
    "price_bounds_mode": ("estimate", "fixed"),
    "graph_shape": ("chain", "random-dag"),
    "format": ("csv", "json"),
}


class ConfigError(Exception):
    """
    Exception raised for configuration errors.

    Raised when the config file is missing or malformed, a key is unknown,
    or a value is out of range or inconsistent with another one.
    """
    pass


class SpecError(ConfigError):
    """Exception raised for an invalid experiment specification."""
    pass


@dataclass(frozen=True)
class PricingSettings:
    """
    How the price curve parameters are obtained.

    Attributes:
        mode: ``estimate`` (D, F from the bid population) or ``fixed`` (configured D, F)
        sigma: Assumed minimum occupation rate
        k: Price coefficient; solved from the valuation spread when None
        upper: Configured D per resource (fixed mode only)
        lower: Configured F per resource (fixed mode only)
        allow_unused: Give resources no bid uses the sentinel bounds D = F = 1
    """
    mode: str = "estimate"
    sigma: float = 0.9
    k: Optional[float] = None
    upper: Optional[Tuple[float, ...]] = None
    lower: Optional[Tuple[float, ...]] = None
    allow_unused: bool = False

    def __post_init__(self):
        if self.mode not in ("estimate", "fixed"):
            raise ConfigError(f"price_bounds_mode must be 'estimate' or 'fixed', got '{self.mode}'")
        has_bounds = self.upper is not None or self.lower is not None
        if self.mode == "estimate" and has_bounds:
            raise ConfigError(
                "D and F are set but price_bounds_mode is 'estimate'. "
                "Set price_bounds_mode to 'fixed' or remove D and F."
            )
        if self.mode == "fixed" and (self.upper is None or self.lower is None):
            raise ConfigError("price_bounds_mode 'fixed' requires both D and F")

    def resolve(self, bids: Iterable, resources: int) -> PriceParams:
        """
        Produce the price parameters for a workload.

        An empty workload in estimate mode gets placeholder bounds D = F = 1.

        Raises:
            ConfigError: If the bounds cannot be resolved into valid parameters
        """
        try:
            if self.mode == "fixed":
                if len(self.upper) != resources or len(self.lower) != resources:
                    raise ConfigError(
                        f"D and F need {resources} entries (one per resource), "
                        f"got {len(self.upper)} and {len(self.lower)}"
                    )
                upper, lower = self.upper, self.lower
            else:
                bids = list(bids)
                if bids:
                    upper, lower = estimate_bounds(bids, resources, self.allow_unused)
                else:
                    logger.warning("No bids to estimate price bounds from, using D = F = 1")
                    upper, lower = (1.0,) * resources, (1.0,) * resources
            return PriceParams.from_bounds(upper, lower, self.sigma, self.k)
        except PricingError as e:
            raise ConfigError(f"Cannot resolve price parameters: {e}")


@dataclass(frozen=True)
class AuctionConfig:
    """
    Everything one auction run needs besides the bids.

    Attributes:
        horizon: Number of slots T
        capacities: Capacity C_r per resource
        theta: Batch interval length
        price_params: Price curve parameters; required before running
        max_containers_exact: Largest graph the exact DAG search accepts

    Raises:
        ConfigError: If any value is out of range or inconsistent
    """
    horizon: int
    capacities: Tuple[float, ...]
    theta: int = 1
    price_params: Optional[PriceParams] = None
    max_containers_exact: int = 8

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        if self.horizon < 1:
            raise ConfigError(f"Horizon must be at least 1 slot, got {self.horizon}")
        if not self.capacities or any(c <= 0 for c in self.capacities):
            raise ConfigError(f"Capacities must be positive, got {list(self.capacities)}")
        if self.theta < 1:
            raise ConfigError(f"theta must be at least 1, got {self.theta}")
        if self.max_containers_exact < 1:
            raise ConfigError(f"max_containers_exact must be at least 1, got {self.max_containers_exact}")
        if self.price_params is not None and self.price_params.resources != len(self.capacities):
            raise ConfigError(
                f"Price parameters cover {self.price_params.resources} resources, "
                f"capacities cover {len(self.capacities)}"
            )

    @property
    def resources(self) -> int:
        return len(self.capacities)

    def with_params(self, params: PriceParams) -> "AuctionConfig":
        return replace(self, price_params=params)

    def with_theta(self, theta: int) -> "AuctionConfig":
        return replace(self, theta=theta)


class Config:
    """
    Merged simulator settings.

    Attributes:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        config_path: JSON config file that was read, if any
        values: Every recognised key with its effective value

    Raises:
        ConfigError: If the config file or any value is invalid

    Example:
        >>> config = Config(overrides={"slots": 50, "sigma": 0.8})
        >>> config.auction_config().horizon
        50
    """

    def __init__(
        self,
        overrides: Optional[Dict[str, Any]] = None,
        config_path: Optional[str] = None,
        defaults: Optional[Dict[str, Any]] = None,
    ):
        """
        Load settings from defaults, environment, config file and overrides.

        Args:
            defaults: Replacements for built-in defaults, below the config file in precedence
            overrides: Values that win over every other source; None entries are ignored
            config_path: JSON config file; defaults to AUCTION_CONFIG_PATH

        Raises:
            ConfigError: If any configuration is missing or invalid
        """
        load_dotenv()
        self.values: Dict[str, Any] = dict(DEFAULTS)
        self._merge(defaults or {}, source="defaults")
        self._load_environment(config_path)
        self._load_config_file()
        self._merge(overrides or {}, source="overrides")
        self._validate()
        if self.values["log_level"]:
            self.log_level = str(self.values["log_level"]).upper()

    def _load_environment(self, config_path: Optional[str]) -> None:
        self.log_level = os.getenv("LOG_LEVEL", "INFO").upper()
        self.config_path = config_path or os.getenv("AUCTION_CONFIG_PATH") or None

    def _load_config_file(self) -> None:
        """
        Merge the JSON config file, if one is configured.

        Raises:
            ConfigError: If the file is missing, unreadable or not a JSON object
        """
        if not self.config_path:
            return
        if not os.path.exists(self.config_path):
            raise ConfigError(
                f"Config file not found at: {self.config_path}. "
                "Unset AUCTION_CONFIG_PATH or point it at a JSON object of settings."
            )
        try:
            with open(self.config_path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"Failed to parse {self.config_path}: Invalid JSON format. "
                f"Error at line {e.lineno}, column {e.colno}: {e.msg}"
            )
        except OSError as e:
            raise ConfigError(f"Failed to read {self.config_path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(
                f"{self.config_path} must contain a JSON object, e.g. {{\"slots\": 100, \"theta\": 4}}"
            )
        self._merge(data, source=self.config_path)

    def _merge(self, data: Dict[str, Any], source: str) -> None:
        for key, value in data.items():
            if key not in DEFAULTS:
                raise ConfigError(
                    f"Unknown setting '{key}' in {source}. Known settings: {', '.join(sorted(DEFAULTS))}"
                )
            if value is None:
                continue
            self.values[key] = self._coerce(key, value, source)

    def _coerce(self, key: str, value: Any, source: str) -> Any:
        try:
            if key in _INT_KEYS:
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError("expected an integer")
                return int(value)
            if key in _FLOAT_KEYS:
                return float(value)
            if key in ("D", "F"):
                if isinstance(value, (list, tuple)):
                    return tuple(float(v) for v in value)
                return float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Setting '{key}' in {source} has invalid value {value!r}: {e}")
        return value

    def _validate(self) -> None:
        v = self.values
        positive_ints = ("slots", "theta", "resources", "reps", "max_containers_exact",
                         "containers_min", "task_slots_min", "window", "chain_split", "workers")
        for key in positive_ints:
            if v[key] < 1:
                raise ConfigError(f"Setting '{key}' must be at least 1, got {v[key]}")
        if v["max_bids"] is not None and v["max_bids"] < 0:
            raise ConfigError(f"Setting 'max_bids' must be non-negative, got {v['max_bids']}")
        if v["density"] <= 0:
            raise ConfigError(f"Setting 'density' must be positive, got {v['density']}")
        if v["capacity"] <= 0:
            raise ConfigError(f"Setting 'capacity' must be positive, got {v['capacity']}")
        if not 0 < v["sigma"] <= 1:
            raise ConfigError(f"Setting 'sigma' must lie in (0, 1], got {v['sigma']}")
        if v["k"] is not None and v["k"] <= 1:
            raise ConfigError(f"Setting 'k' must be greater than 1, got {v['k']}")
        if v["df_ratio"] < 1:
            raise ConfigError(f"Setting 'df_ratio' must be at least 1, got {v['df_ratio']}")
        if not 0 < v["loss_target"] < 1:
            raise ConfigError(f"Setting 'loss_target' must lie in (0, 1), got {v['loss_target']}")
        if not 0 <= v["demand_min"] < 1:
            raise ConfigError(f"Setting 'demand_min' must lie in [0, 1), got {v['demand_min']}")
        if v["slot_length"] <= 0:
            raise ConfigError(f"Setting 'slot_length' must be positive, got {v['slot_length']}")
        if v["containers_max"] < v["containers_min"]:
            raise ConfigError(
                f"containers_max ({v['containers_max']}) is below containers_min ({v['containers_min']})"
            )
        if v["task_slots_max"] < v["task_slots_min"]:
            raise ConfigError(
                f"task_slots_max ({v['task_slots_max']}) is below task_slots_min ({v['task_slots_min']})"
            )
        for key, allowed in _CHOICES.items():
            if v[key] not in allowed:
                raise ConfigError(f"Setting '{key}' must be one of {', '.join(allowed)}, got '{v[key]}'")

    def get(self, key: str) -> Any:
        return self.values[key]

    def with_values(self, **changes: Any) -> "Config":
        """
        Copy of this configuration with some settings replaced.

        Raises:
            ConfigError: If a key is unknown or a new value is invalid
        """
        clone = copy.copy(self)
        clone.values = dict(self.values)
        clone._merge(changes, source="sweep")
        clone._validate()
        return clone

    def _per_resource(self, key: str) -> Optional[Tuple[float, ...]]:
        value = self.values[key]
        if value is None:
            return None
        if isinstance(value, tuple):
            return value
        return (value,) * self.values["resources"]

    def pricing_settings(self) -> PricingSettings:
        return PricingSettings(
            mode=self.values["price_bounds_mode"],
            sigma=self.values["sigma"],
            k=self.values["k"],
            upper=self._per_resource("D"),
            lower=self._per_resource("F"),
        )

    def auction_config(self, price_params: Optional[PriceParams] = None, theta: Optional[int] = None) -> AuctionConfig:
        return AuctionConfig(
            horizon=self.values["slots"],
            capacities=(self.values["capacity"],) * self.values["resources"],
            theta=theta if theta is not None else self.values["theta"],
            price_params=price_params,
            max_containers_exact=self.values["max_containers_exact"],
        )

    def unit_value_range(self) -> Tuple[float, float]:
        """Range [F, D] of per-unit bid values used by the workload generator."""
        return 1.0, float(self.values["df_ratio"])
