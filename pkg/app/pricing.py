"""
Marginal resource pricing for the posted-price auction.

The price of resource r at a slot grows exponentially with the fraction of
capacity already sold:

    k_r(w) = (sigma * F_r / k) * (k * D_r / (sigma * F_r)) ** (w / C_r)

so the first unit is offered at sigma * F_r / k and the last one at D_r. The
coefficient k solves k - 1 = max_r ln(k * D_r / (sigma * F_r)), which makes
the batch auction k-competitive.
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect

if TYPE_CHECKING:
    from app.model import Bid, MarketState, Schedule

logger = logging.getLogger("app.pricing")

K_TOLERANCE = 1e-9


class PricingError(Exception):
    """
    Exception raised for invalid pricing inputs.

    Raised for out-of-range allocations, bids that do not use a resource whose
    density is requested, valuation spreads without a usable coefficient and
    schedules that reference slots outside the market horizon.
    """
    pass


@dataclass(frozen=True)
class PriceParams:
    """
    Parameters of the marginal price curve.

    Attributes:
        upper: Maximum valuation density D_r per resource
        lower: Minimum valuation density F_r per resource
        sigma: Assumed minimum occupation rate, 0 < sigma <= 1
        k: Price coefficient, k > 1

    Raises:
        PricingError: If any invariant on the parameters is violated
    """
    upper: Tuple[float, ...]
    lower: Tuple[float, ...]
    sigma: float
    k: float

    def __post_init__(self):
        object.__setattr__(self, "upper", tuple(float(d) for d in self.upper))
        object.__setattr__(self, "lower", tuple(float(f) for f in self.lower))
        if len(self.upper) != len(self.lower) or not self.upper:
            raise PricingError(
                f"D and F must have one entry per resource, got {len(self.upper)} and {len(self.lower)}"
            )
        for r, (d, f) in enumerate(zip(self.upper, self.lower)):
            if not (f > 0 and d >= f):
                raise PricingError(f"Resource {r}: need D >= F > 0, got D={d}, F={f}")
        if not 0 < self.sigma <= 1:
            raise PricingError(f"sigma must lie in (0, 1], got {self.sigma}")
        if not self.k > 1:
            raise PricingError(f"k must be greater than 1, got {self.k}")

    @classmethod
    def from_bounds(
        cls,
        upper: Sequence[float],
        lower: Sequence[float],
        sigma: float = 0.9,
        k: Optional[float] = None,
    ) -> "PriceParams":
        """Build parameters, solving for k when it is not given."""
        if k is None:
            if not 0 < sigma <= 1:
                raise PricingError(f"sigma must lie in (0, 1], got {sigma}")
            varpi = max(d / (sigma * f) for d, f in zip(upper, lower))
            k = solve_k(varpi)
        return cls(tuple(upper), tuple(lower), sigma, k)

    @property
    def resources(self) -> int:
        return len(self.upper)

    @property
    def varpi(self) -> float:
        return max(d / (self.sigma * f) for d, f in zip(self.upper, self.lower))

    @property
    def alpha(self) -> float:
        """max_r ln(k D_r / (sigma F_r))."""
        return max(math.log(self.k * d / (self.sigma * f)) for d, f in zip(self.upper, self.lower))

    @property
    def competitive_bound(self) -> float:
        return self.k / (self.k - 1) * self.alpha

    def base_prices(self) -> np.ndarray:
        return self.sigma * np.asarray(self.lower) / self.k


def price_curve(allocated: np.ndarray, params: PriceParams, capacities: np.ndarray) -> np.ndarray:
    """
    Vectorised marginal prices for an allocation array whose last axis is the resource.
    """
    base = params.base_prices()
    growth = params.k * np.asarray(params.upper) / (params.sigma * np.asarray(params.lower))
    return base * np.power(growth, np.asarray(allocated, dtype=float) / np.asarray(capacities, dtype=float))


def marginal_price(allocated: float, r: int, params: PriceParams, capacity: float) -> float:
    """
    Price per unit of resource ``r`` once ``allocated`` units of ``capacity`` are sold.

    Raises:
        PricingError: If the allocation lies outside [0, capacity]
    """
    if allocated < 0 or allocated > capacity:
        raise PricingError(f"Allocation out of range: {allocated} not in [0, {capacity}]")
    base = params.sigma * params.lower[r] / params.k
    growth = params.k * params.upper[r] / (params.sigma * params.lower[r])
    return float(base * np.power(growth, allocated / capacity))


def solve_k(varpi: float) -> float:
    """
    Solve k - 1 = ln(k * varpi) for the root k > 1.

    Uses bracketed bisection on g(k) = k - 1 - ln(k * varpi); the upper end of
    the bracket is doubled until g changes sign.

    Args:
        varpi: Valuation spread max_r D_r / (sigma F_r)

    Returns:
        k with |g(k)| <= 1e-9

    Raises:
        PricingError: If varpi <= 1, where no root above 1 exists
    """
    if varpi < 1:
        raise PricingError(f"Valuation spread below 1: varpi={varpi}")
    if varpi == 1:
        raise PricingError("Valuation spread of exactly 1 only admits k = 1; k > 1 is required")

    def g(k: float) -> float:
        return k - 1 - math.log(k * varpi)

    lo = 1.0 + 1e-12
    hi = 2.0
    while g(hi) <= 0:
        hi *= 2
    k = bisect(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(k)) > K_TOLERANCE:
        raise PricingError(f"Bisection for k did not converge: varpi={varpi}, residual={g(k)}")
    return k


def valuation_density(bid: "Bid", r: int) -> float:
    """
    Value per unit-slot of resource ``r``: price over the total slot-demand of ``r`` across containers.

    Raises:
        PricingError: If the bid uses none of resource ``r``
    """
    volume = sum(c.slots_required * c.demand[r] for c in bid.containers)
    if volume <= 0:
        raise PricingError(f"Bid {bid.id} uses no resource {r}")
    return bid.price / volume


def estimate_bounds(
    bids: Iterable["Bid"],
    resources: int,
    allow_unused: bool = False,
) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """
    Estimate (D, F) as the max and min valuation density over a bid population.

    Args:
        bids: Non-empty bid population
        resources: Number of resource types R
        allow_unused: Give D_r = F_r = 1 to resources no bid uses instead of failing

    Raises:
        PricingError: On an empty population, or an unused resource without ``allow_unused``
    """
    bids = list(bids)
    if not bids:
        raise PricingError("Cannot estimate price bounds from an empty bid population")
    upper, lower = [], []
    for r in range(resources):
        densities = [
            valuation_density(b, r)
            for b in bids
            if sum(c.slots_required * c.demand[r] for c in b.containers) > 0
        ]
        if not densities:
            if not allow_unused:
                raise PricingError(
                    f"Resource {r} is used by no bid; exclude it or configure its bounds"
                )
            logger.warning(f"Resource {r} unused by every bid, using sentinel bounds D=F=1")
            densities = [1.0]
        upper.append(max(densities))
        lower.append(min(densities))
    return tuple(upper), tuple(lower)


def unit_cost(demand: np.ndarray, state: "MarketState", slot: int) -> float:
    """Cost of one slot of a container: its demand dotted with the slot's prices."""
    return float(np.dot(demand, state.prices[slot - 1]))


def schedule_cost(schedule: "Schedule", bid: "Bid", state: "MarketState") -> float:
    """
    Posted cost of a schedule at the current prices.

    Raises:
        PricingError: If the schedule references a slot outside 1..T
    """
    total = 0.0
    for m, slots in enumerate(schedule.assignment):
        demand = bid.containers[m].demand_array()
        for t in slots:
            if not 1 <= t <= state.horizon:
                raise PricingError(f"Schedule references slot {t} outside 1..{state.horizon}")
            total += unit_cost(demand, state, t)
    return total
