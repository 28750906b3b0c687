"""
Tests for the marginal price curve, the k solver and schedule costing.
"""

import logging
import math

import numpy as np
import pytest

from app.model import Bid, Container, ContainerGraph, MarketState, Schedule
from app.pricing import (
    PriceParams,
    PricingError,
    estimate_bounds,
    marginal_price,
    price_curve,
    schedule_cost,
    solve_k,
    unit_cost,
    valuation_density,
)


class TestSolveK:
    """Test the fixed point k - 1 = ln(k * varpi)."""

    def test_varpi_e(self):
        assert solve_k(math.e) == pytest.approx(3.1462, abs=1e-3)

    def test_varpi_two(self):
        assert solve_k(2.0) == pytest.approx(2.679, abs=1e-3)

    def test_residual_within_tolerance(self):
        rng = np.random.default_rng(7)
        for varpi in rng.uniform(1.001, 1e4, 200):
            k = solve_k(float(varpi))
            assert k > 1
            assert abs(k - 1 - math.log(k * varpi)) <= 1e-9

    def test_varpi_one_rejected(self):
        with pytest.raises(PricingError):
            solve_k(1.0)

    def test_varpi_below_one_rejected(self):
        with pytest.raises(PricingError) as exc_info:
            solve_k(0.5)

        assert "below 1" in str(exc_info.value)

    def test_k_grows_with_spread(self):
        assert solve_k(2.0) < solve_k(4.0) < solve_k(100.0)


class TestPriceParams:
    """Test parameter validation and derived quantities."""

    def test_from_bounds_solves_k(self, params):
        assert params.k == pytest.approx(solve_k(4.0 / 0.9))

    def test_solved_k_gives_bound_k(self, params):
        assert params.alpha == pytest.approx(params.k - 1, rel=1e-8)
        assert params.competitive_bound == pytest.approx(params.k, rel=1e-8)

    def test_fixed_k_kept(self):
        fixed = PriceParams.from_bounds((4.0,), (1.0,), sigma=1.0, k=2.0)

        assert fixed.k == 2.0

    @pytest.mark.parametrize("upper,lower,sigma,k", [
        ((1.0,), (2.0,), 0.9, 2.0),
        ((1.0,), (0.0,), 0.9, 2.0),
        ((2.0,), (1.0,), 0.0, 2.0),
        ((2.0,), (1.0,), 1.5, 2.0),
        ((2.0,), (1.0,), 0.9, 1.0),
        ((2.0, 3.0), (1.0,), 0.9, 2.0),
    ])
    def test_invalid_parameters_rejected(self, upper, lower, sigma, k):
        with pytest.raises(PricingError):
            PriceParams(upper, lower, sigma, k)


class TestMarginalPrice:
    """Test the exponential price curve."""

    def test_hand_example(self):
        params = PriceParams((4.0,), (1.0,), sigma=1.0, k=2.0)

        assert marginal_price(5.0, 0, params, 10.0) == pytest.approx(0.5 * math.sqrt(8), rel=1e-12)
        assert marginal_price(5.0, 0, params, 10.0) == pytest.approx(1.41421, abs=1e-5)

    def test_boundaries_on_random_parameters(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            lower = float(rng.uniform(0.1, 10.0))
            upper = lower * float(rng.uniform(1.0, 50.0))
            sigma = float(rng.uniform(0.05, 1.0))
            capacity = float(rng.uniform(1.0, 100.0))
            params = PriceParams.from_bounds((upper,), (lower,), sigma=sigma)

            assert marginal_price(0.0, 0, params, capacity) == pytest.approx(sigma * lower / params.k, rel=1e-12)
            assert marginal_price(capacity, 0, params, capacity) == pytest.approx(upper, rel=1e-12)

    def test_strictly_increasing(self, params):
        values = [marginal_price(w, 0, params, 10.0) for w in np.linspace(0, 10, 21)]

        assert all(a < b for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("allocated", [-0.1, 10.5])
    def test_out_of_range_rejected(self, params, allocated):
        with pytest.raises(PricingError) as exc_info:
            marginal_price(allocated, 0, params, 10.0)

        assert "out of range" in str(exc_info.value)

    def test_vectorised_curve_matches_scalar(self, params):
        allocated = np.array([[0.0, 2.5], [5.0, 10.0]])
        curve = price_curve(allocated, params, np.array([10.0, 10.0]))

        for index, w in np.ndenumerate(allocated):
            assert curve[index] == pytest.approx(marginal_price(w, 0, params, 10.0), rel=1e-12)

    def test_differential_allocation_price_relation(self):
        rng = np.random.default_rng(3)
        params = PriceParams.from_bounds((8.0,), (1.0,), sigma=0.9)
        capacity = 20.0
        for _ in range(500):
            delta = float(rng.uniform(1e-6, 0.01)) * capacity
            w = float(rng.uniform(0.0, capacity - delta))
            before = marginal_price(w, 0, params, capacity)
            after = marginal_price(w + delta, 0, params, capacity)

            assert before * delta >= capacity * (after - before) / params.alpha * (1 - 10 * delta / capacity)


class TestValuationDensity:
    """Test per-resource valuation densities and their bounds."""

    def test_single_container(self):
        bid = _bid(1, 12.0, [(3, (2.0,))])

        assert valuation_density(bid, 0) == pytest.approx(2.0)

    def test_two_containers(self):
        bid = _bid(1, 5.0, [(1, (1.0,)), (1, (4.0,))])

        assert valuation_density(bid, 0) == pytest.approx(1.0)

    def test_unused_resource_rejected(self):
        bid = _bid(1, 7.0, [(2, (1.0, 0.0))])

        with pytest.raises(PricingError):
            valuation_density(bid, 1)

    def test_bounds_are_max_and_min(self):
        bids = [_bid(1, 4.0, [(2, (1.0,))]), _bid(2, 1.0, [(1, (1.0,))])]

        assert estimate_bounds(bids, 1) == ((2.0,), (1.0,))

    def test_single_bid_bounds_equal(self):
        upper, lower = estimate_bounds([_bid(1, 6.0, [(2, (1.0, 3.0))])], 2)

        assert upper == lower

    def test_bounds_match_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        bids = [
            _bid(i, float(rng.uniform(1, 10)), [(int(rng.integers(1, 4)), tuple(rng.uniform(0.1, 1, 3)))])
            for i in range(1, 30)
        ]
        upper, lower = estimate_bounds(bids, 3)

        for r in range(3):
            densities = [valuation_density(b, r) for b in bids]
            assert upper[r] == max(densities)
            assert lower[r] == min(densities)

    def test_unused_resource_needs_sentinel(self, caplog):
        bids = [_bid(1, 4.0, [(2, (1.0, 0.0))])]

        with pytest.raises(PricingError):
            estimate_bounds(bids, 2)
        with caplog.at_level(logging.WARNING, logger="app.pricing"):
            upper, lower = estimate_bounds(bids, 2, allow_unused=True)

        assert upper[1] == lower[1] == 1.0
        assert "unused" in caplog.text

    def test_empty_population_rejected(self):
        with pytest.raises(PricingError):
            estimate_bounds([], 1)


class TestScheduleCost:
    """Test posted costs of schedules."""

    def test_empty_schedule_costs_nothing(self, market):
        bid = _bid(1, 1.0, [])

        assert schedule_cost(Schedule(()), bid, market) == 0.0

    def test_single_slot(self, market):
        market.prices[2] = [0.5, 3.0]
        bid = _bid(1, 5.0, [(1, (2.0, 0.0))])

        assert schedule_cost(Schedule(((3,),)), bid, market) == pytest.approx(1.0)

    def test_shared_slot_equals_separate_costing(self, market):
        bid = _bid(1, 5.0, [(1, (1.0, 0.5)), (1, (0.5, 2.0))])
        together = schedule_cost(Schedule(((3,), (3,))), bid, market)
        separate = sum(unit_cost(c.demand_array(), market, 3) for c in bid.containers)

        assert together == pytest.approx(separate)

    def test_slot_beyond_horizon_rejected(self, market):
        bid = _bid(1, 5.0, [(1, (1.0, 1.0))])

        with pytest.raises(PricingError):
            schedule_cost(Schedule(((11,),)), bid, market)


def _bid(bid_id, price, containers):
    graph = ContainerGraph(tuple(Container(n, tuple(float(h) for h in d)) for n, d in containers))
    return Bid(id=bid_id, graph=graph, arrival=1, deadline=10, price=price)


# Pytest fixtures

@pytest.fixture
def params():
    """Single-resource parameters with D/F = 4 and sigma = 0.9."""
    return PriceParams.from_bounds((4.0,), (1.0,), sigma=0.9)


@pytest.fixture
def market():
    """Empty two-resource market over 10 slots."""
    params = PriceParams.from_bounds((4.0, 4.0), (1.0, 1.0), sigma=0.9)
    return MarketState.empty(10, (10.0, 10.0), params)
