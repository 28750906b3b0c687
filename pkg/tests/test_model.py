"""
Tests for bids, container graphs, schedules, market state and bid files.
"""

import json
import os
import tempfile

import numpy as np
import pytest

from app.model import (
    Bid,
    Container,
    ContainerGraph,
    MarketState,
    ModelError,
    Schedule,
    admission_time,
    bid_from_dict,
    dump_bids,
    is_chain,
    load_bids,
    longest_path_slots,
    path_slack,
    topological_order,
    validate_bid,
)
from app.pricing import PriceParams, marginal_price


class TestAdmissionTime:
    """Test the batch admission slot."""

    @pytest.mark.parametrize("arrival,theta,expected", [
        (5, 4, 8),
        (8, 4, 8),
        (1, 1, 1),
        (1, 4, 4),
        (9, 4, 12),
        (7, 1, 7),
    ])
    def test_examples(self, arrival, theta, expected):
        assert admission_time(_bid(arrival=arrival), theta) == expected

    def test_never_before_arrival(self):
        for arrival in range(1, 40):
            for theta in range(1, 9):
                admitted = admission_time(_bid(arrival=arrival), theta)
                assert arrival <= admitted < arrival + theta
                assert admitted % theta == 0

    def test_zero_theta_rejected(self):
        with pytest.raises(ModelError):
            admission_time(_bid(), 0)


class TestContainerGraph:
    """Test topological ordering and chain detection."""

    def test_chain_order(self):
        graph = _graph(3, [(0, 1), (1, 2)])

        assert topological_order(graph) == [0, 1, 2]
        assert is_chain(graph)

    def test_ties_broken_by_index(self):
        graph = _graph(4, [(2, 0), (3, 1)])

        assert topological_order(graph) == [2, 0, 3, 1]

    def test_diamond_is_not_a_chain(self):
        graph = _graph(4, [(0, 1), (0, 2), (1, 3), (2, 3)])

        assert not is_chain(graph)
        assert topological_order(graph) == [0, 1, 2, 3]

    def test_reversed_chain_is_a_chain(self):
        assert is_chain(_graph(3, [(2, 1), (1, 0)]))

    def test_single_container_is_a_chain(self):
        assert is_chain(_graph(1, []))

    def test_disconnected_containers_are_not_a_chain(self):
        assert not is_chain(_graph(2, []))

    def test_cycle_rejected(self):
        with pytest.raises(ModelError) as exc_info:
            topological_order(_graph(3, [(0, 1), (1, 2), (2, 0)]))

        assert "not a DAG" in str(exc_info.value)

    def test_cycle_is_not_a_chain(self):
        assert not is_chain(_graph(2, [(0, 1), (1, 0)]))

    def test_path_slack(self):
        graph = ContainerGraph(
            (Container(2, (1.0,)), Container(1, (1.0,)), Container(3, (1.0,)), Container(1, (1.0,))),
            {(0, 1), (0, 2), (1, 3), (2, 3)},
        )
        before, after = path_slack(graph)

        assert before == [0, 2, 2, 5]
        assert after == [4, 1, 1, 0]
        assert longest_path_slots(graph) == 6

    def test_empty_graph_has_no_length(self):
        assert longest_path_slots(ContainerGraph(())) == 0


class TestValidateBid:
    """Test structural bid validation."""

    def test_valid_bid(self):
        assert validate_bid(_bid(), horizon=20, resources=2).ok

    def test_cycle_reported(self):
        bid = _bid(edges=[(0, 1), (1, 0)])

        assert "cycle" in validate_bid(bid, horizon=20, resources=2).codes()

    def test_never_feasible_reported(self):
        bid = _bid(arrival=5, deadline=8, slots=(3, 3))

        report = validate_bid(bid, horizon=20, resources=2)

        assert report.codes() == ["never-feasible"]

    def test_batch_shrinks_window(self):
        bid = _bid(arrival=5, deadline=10, slots=(2, 2))

        assert validate_bid(bid, horizon=20, resources=2, theta=1).ok
        assert "never-feasible" in validate_bid(bid, horizon=20, resources=2, theta=4).codes()

    @pytest.mark.parametrize("kwargs,code", [
        ({"arrival": 0}, "arrival"),
        ({"arrival": 21, "deadline": 21}, "arrival"),
        ({"arrival": 6, "deadline": 5}, "deadline"),
        ({"deadline": 25}, "deadline"),
        ({"price": 0.0}, "price"),
        ({"slots": (0, 1)}, "slots"),
        ({"demand": (1.0,)}, "demand"),
        ({"demand": (-1.0, 1.0)}, "demand"),
        ({"demand": (0.0, 0.0)}, "demand"),
        ({"edges": [(1, 1)]}, "self-edge"),
        ({"edges": [(0, 5)]}, "edge"),
    ])
    def test_invariant_codes(self, kwargs, code):
        assert code in validate_bid(_bid(**kwargs), horizon=20, resources=2).codes()

    def test_empty_job_reported(self):
        bid = Bid(id=1, graph=ContainerGraph(()), arrival=1, deadline=5, price=1.0)

        assert validate_bid(bid, horizon=20, resources=2).codes() == ["slots"]

    def test_every_violation_listed(self):
        bid = _bid(arrival=0, price=-1.0, edges=[(1, 1)])

        codes = validate_bid(bid, horizon=20, resources=2).codes()

        assert {"arrival", "price", "self-edge"} <= set(codes)


class TestSchedule:
    """Test schedule normalisation and footprints."""

    def test_slots_sorted(self):
        schedule = Schedule([[5, 2], [7]])

        assert schedule.assignment == ((2, 5), (7,))
        assert schedule.slots() == [2, 5, 7]

    def test_shared_slot_footprint_adds_demands(self):
        bid = _bid(slots=(1, 1), edges=[])
        footprint = Schedule(((3,), (3,))).footprint(bid)

        assert list(footprint) == [3]
        assert footprint[3] == pytest.approx([2.0, 1.0])

    def test_to_dict_is_one_based(self):
        assert Schedule(((1, 2), (4,))).to_dict() == {"1": [1, 2], "2": [4]}


class TestMarketState:
    """Test allocation bookkeeping and repricing."""

    def test_starts_at_base_prices(self, market):
        assert market.prices == pytest.approx(np.tile(market.params.base_prices(), (10, 1)))

    def test_allocation_reprices_slot(self, market):
        market.allocate(4, np.array([5.0, 0.0]))

        assert market.prices[3, 0] == pytest.approx(marginal_price(5.0, 0, market.params, 10.0))
        assert market.prices[3, 1] == pytest.approx(market.params.base_prices()[1])
        assert market.prices[2, 0] == pytest.approx(market.params.base_prices()[0])

    def test_full_slot_priced_at_upper_bound(self, market):
        market.allocate(1, np.array([10.0, 10.0]))

        assert market.prices[0] == pytest.approx(market.params.upper)
        assert market.remaining(1) == pytest.approx([0.0, 0.0])

    def test_overflow_rejected(self, market):
        market.allocate(2, np.array([9.0, 0.0]))

        with pytest.raises(ModelError) as exc_info:
            market.allocate(2, np.array([1.5, 0.0]))

        assert "exceed capacity" in str(exc_info.value)
        assert market.allocated[1, 0] == 9.0

    def test_slot_outside_horizon_rejected(self, market):
        with pytest.raises(ModelError):
            market.allocate(11, np.array([1.0, 1.0]))


class TestBidFiles:
    """Test reading and writing JSON bid files."""

    def test_round_trip(self):
        bids = [_bid(), _bid(bid_id=2, arrival=3, edges=[])]
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bids.json")
            dump_bids(bids, path)

            assert load_bids(path) == bids

    def test_edges_are_one_based_on_disk(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bids.json")
            dump_bids([_bid()], path)
            with open(path) as f:
                data = json.load(f)

        assert data[0]["edges"] == [[1, 2]]

    def test_missing_file(self):
        with pytest.raises(ModelError) as exc_info:
            load_bids("/nonexistent/bids.json")

        assert "not found" in str(exc_info.value)

    def test_invalid_json(self):
        with tempfile.NamedTemporaryFile(mode="w", suffix=".json", delete=False) as f:
            f.write("[{not json")
            path = f.name
        try:
            with pytest.raises(ModelError) as exc_info:
                load_bids(path)

            assert "invalid JSON" in str(exc_info.value)
        finally:
            os.unlink(path)

    def test_not_an_array(self):
        with tempfile.NamedTemporaryFile(mode="w", suffix=".json", delete=False) as f:
            json.dump({"id": 1}, f)
            path = f.name
        try:
            with pytest.raises(ModelError):
                load_bids(path)
        finally:
            os.unlink(path)

    def test_missing_key(self):
        with pytest.raises(ModelError) as exc_info:
            bid_from_dict({"id": 1, "arrival": 1, "deadline": 2, "containers": []})

        assert "Expected keys" in str(exc_info.value)


def _graph(size, edges):
    return ContainerGraph(tuple(Container(1, (1.0,)) for _ in range(size)), edges)


def _bid(bid_id=1, arrival=2, deadline=10, price=5.0, slots=(2, 1), demand=(1.0, 0.5), edges=((0, 1),)):
    containers = tuple(Container(n, tuple(demand)) for n in slots)
    return Bid(id=bid_id, graph=ContainerGraph(containers, edges), arrival=arrival, deadline=deadline, price=price)


# Pytest fixtures

@pytest.fixture
def market():
    """Empty two-resource market with capacity 10 over 10 slots."""
    params = PriceParams.from_bounds((4.0, 2.0), (1.0, 1.0), sigma=0.9)
    return MarketState.empty(10, (10.0, 10.0), params)
