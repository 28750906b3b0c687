"""
Tests for configuration loading, pricing settings and auction configs.
"""

import json
import os
import tempfile
from unittest.mock import patch

import pytest

from app.config import DEFAULTS, AuctionConfig, Config, ConfigError, PricingSettings
from app.model import Bid, Container, ContainerGraph
from app.pricing import PriceParams, solve_k


class TestConfigInitialization:
    """Test default loading and typed access."""

    def test_defaults(self, clean_environment):
        config = Config()

        assert config.get("slots") == 200
        assert config.get("theta") == 4
        assert config.get("capacity") == 50.0
        assert config.get("resources") == 3
        assert config.get("sigma") == 0.9
        assert config.log_level == "INFO"
        assert config.config_path is None

    def test_every_default_is_exposed(self, clean_environment):
        config = Config()

        assert set(config.values) == set(DEFAULTS)

    def test_overrides_win(self, clean_environment):
        config = Config(overrides={"slots": 50, "theta": 6, "seed": None})

        assert config.get("slots") == 50
        assert config.get("theta") == 6
        assert config.get("seed") == DEFAULTS["seed"]

    def test_command_defaults_below_overrides(self, clean_environment):
        config = Config(overrides={"slots": 20}, defaults={"slots": 12, "max_bids": 5})

        assert config.get("slots") == 20
        assert config.get("max_bids") == 5

    def test_values_coerced(self, clean_environment):
        config = Config(overrides={"density": 3, "slots": 40.0})

        assert isinstance(config.get("density"), float)
        assert config.get("slots") == 40


class TestEnvironment:
    """Test environment variable handling."""

    def test_log_level_defaults_to_info(self, clean_environment):
        assert Config().log_level == "INFO"

    def test_custom_log_level_respected(self, clean_environment):
        os.environ["LOG_LEVEL"] = "debug"

        assert Config().log_level == "DEBUG"

    def test_log_level_flag_beats_environment(self, clean_environment):
        os.environ["LOG_LEVEL"] = "DEBUG"

        assert Config(overrides={"log_level": "WARNING"}).log_level == "WARNING"

    def test_config_path_from_environment(self, clean_environment, config_file):
        os.environ["AUCTION_CONFIG_PATH"] = config_file({"theta": 7})

        config = Config()

        assert config.get("theta") == 7
        assert config.config_path == os.environ["AUCTION_CONFIG_PATH"]


class TestConfigFile:
    """Test JSON config file parsing and validation."""

    def test_file_values_loaded(self, clean_environment, config_file):
        config = Config(config_path=config_file({"slots": 80, "graph_shape": "random-dag"}))

        assert config.get("slots") == 80
        assert config.get("graph_shape") == "random-dag"

    def test_overrides_beat_file(self, clean_environment, config_file):
        config = Config(overrides={"slots": 30}, config_path=config_file({"slots": 80}))

        assert config.get("slots") == 30

    def test_file_beats_command_defaults(self, clean_environment, config_file):
        config = Config(config_path=config_file({"slots": 80}), defaults={"slots": 12})

        assert config.get("slots") == 80

    def test_missing_file_raises_error(self, clean_environment):
        with pytest.raises(ConfigError) as exc_info:
            Config(config_path="/nonexistent/auction.json")

        assert "not found" in str(exc_info.value)

    def test_invalid_json_raises_error(self, clean_environment):
        with tempfile.NamedTemporaryFile(mode="w", suffix=".json", delete=False) as f:
            f.write("{ invalid json }")
            temp_path = f.name

        try:
            with pytest.raises(ConfigError) as exc_info:
                Config(config_path=temp_path)

            assert "JSON" in str(exc_info.value)
        finally:
            os.unlink(temp_path)

    def test_non_object_raises_error(self, clean_environment, config_file):
        with pytest.raises(ConfigError) as exc_info:
            Config(config_path=config_file([1, 2, 3]))

        assert "JSON object" in str(exc_info.value)

    def test_unknown_key_raises_error(self, clean_environment, config_file):
        with pytest.raises(ConfigError) as exc_info:
            Config(config_path=config_file({"slotz": 10}))

        assert "Unknown setting 'slotz'" in str(exc_info.value)

    def test_per_resource_bounds(self, clean_environment, config_file):
        path = config_file({"price_bounds_mode": "fixed", "D": [4, 3, 2], "F": 1, "resources": 3})

        settings = Config(config_path=path).pricing_settings()

        assert settings.upper == (4.0, 3.0, 2.0)
        assert settings.lower == (1.0, 1.0, 1.0)


class TestValidation:
    """Test range and consistency checks."""

    @pytest.mark.parametrize("overrides", [
        {"slots": 0},
        {"theta": 0},
        {"sigma": 0.0},
        {"sigma": 1.5},
        {"k": 1.0},
        {"df_ratio": 0.5},
        {"density": -1.0},
        {"capacity": 0.0},
        {"loss_target": 1.0},
        {"containers_min": 3, "containers_max": 2},
        {"task_slots_min": 4, "task_slots_max": 2},
        {"graph_shape": "tree"},
        {"format": "xml"},
        {"workers": 0},
        {"max_bids": -1},
        {"demand_min": 1.0},
        {"demand_min": -0.1},
    ])
    def test_out_of_range(self, clean_environment, overrides):
        with pytest.raises(ConfigError):
            Config(overrides=overrides)

    def test_fractional_integer_rejected(self, clean_environment):
        with pytest.raises(ConfigError) as exc_info:
            Config(overrides={"slots": 10.5})

        assert "slots" in str(exc_info.value)

    def test_non_numeric_rejected(self, clean_environment):
        with pytest.raises(ConfigError):
            Config(overrides={"density": "lots"})


class TestPricingSettings:
    """Test how price parameters are resolved."""

    def test_estimate_from_bids(self):
        bids = [_bid(1, 4.0), _bid(2, 2.0)]

        params = PricingSettings(sigma=0.9).resolve(bids, 1)

        assert params.upper == (4.0,)
        assert params.lower == (2.0,)
        assert params.k == pytest.approx(solve_k(2.0 / 0.9))

    def test_fixed_bounds(self):
        params = PricingSettings(mode="fixed", upper=(8.0,), lower=(2.0,), k=3.0).resolve([], 1)

        assert params == PriceParams((8.0,), (2.0,), 0.9, 3.0)

    def test_fixed_bounds_wrong_length(self):
        with pytest.raises(ConfigError):
            PricingSettings(mode="fixed", upper=(8.0,), lower=(2.0,)).resolve([], 2)

    def test_bounds_in_estimate_mode_rejected(self):
        with pytest.raises(ConfigError) as exc_info:
            PricingSettings(upper=(2.0,), lower=(1.0,))

        assert "fixed" in str(exc_info.value)

    def test_fixed_mode_needs_bounds(self):
        with pytest.raises(ConfigError):
            PricingSettings(mode="fixed", upper=(2.0,))

    def test_empty_workload_placeholder(self):
        params = PricingSettings().resolve([], 2)

        assert params.upper == params.lower == (1.0, 1.0)

    def test_pricing_error_becomes_config_error(self):
        with pytest.raises(ConfigError) as exc_info:
            PricingSettings(mode="fixed", upper=(1.0,), lower=(2.0,), k=2.0).resolve([], 1)

        assert "Cannot resolve price parameters" in str(exc_info.value)


class TestAuctionConfig:
    """Test the per-run auction configuration."""

    def test_from_config(self, clean_environment):
        config = Config(overrides={"slots": 30, "capacity": 20.0, "resources": 2, "theta": 3})

        auction = config.auction_config()

        assert auction.horizon == 30
        assert auction.capacities == (20.0, 20.0)
        assert auction.theta == 3
        assert auction.price_params is None

    def test_theta_override(self, clean_environment):
        assert Config().auction_config(theta=9).theta == 9

    def test_with_params(self):
        params = PriceParams.from_bounds((2.0,), (1.0,))
        auction = AuctionConfig(horizon=5, capacities=(1.0,)).with_params(params)

        assert auction.price_params is params

    @pytest.mark.parametrize("kwargs", [
        {"horizon": 0, "capacities": (1.0,)},
        {"horizon": 5, "capacities": ()},
        {"horizon": 5, "capacities": (0.0,)},
        {"horizon": 5, "capacities": (1.0,), "theta": 0},
        {"horizon": 5, "capacities": (1.0,), "max_containers_exact": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AuctionConfig(**kwargs)

    def test_params_must_match_resources(self):
        with pytest.raises(ConfigError):
            AuctionConfig(horizon=5, capacities=(1.0, 1.0), price_params=PriceParams.from_bounds((2.0,), (1.0,)))

    def test_unit_value_range(self, clean_environment):
        assert Config(overrides={"df_ratio": 4.0}).unit_value_range() == (1.0, 4.0)


class TestWithValues:
    """Test copies with replaced settings."""

    def test_replaces_and_keeps_original(self, clean_environment):
        base = Config(overrides={"density": 4.0, "seed": 3})

        changed = base.with_values(density=8.0)

        assert changed.get("density") == 8.0
        assert changed.get("seed") == 3
        assert base.get("density") == 4.0

    def test_invalid_value_rejected(self, clean_environment):
        with pytest.raises(ConfigError):
            Config().with_values(slots=0)

    def test_unknown_key_rejected(self, clean_environment):
        with pytest.raises(ConfigError):
            Config().with_values(speed=2)


def _bid(bid_id, price):
    graph = ContainerGraph((Container(1, (1.0,)),))
    return Bid(id=bid_id, graph=graph, arrival=1, deadline=2, price=price)


# Pytest fixtures

@pytest.fixture
def clean_environment():
    """Run with no LOG_LEVEL or AUCTION_CONFIG_PATH set."""
    with patch.dict(os.environ, {}, clear=True):
        yield


@pytest.fixture
def config_file():
    """Write JSON config data to a temporary file and return its path."""
    paths = []

    def write(data):
        with tempfile.NamedTemporaryFile(mode="w", suffix=".json", delete=False) as f:
            json.dump(data, f)
            paths.append(f.name)
        return paths[-1]

    yield write

    # Cleanup
    for path in paths:
        if os.path.exists(path):
            os.unlink(path)
