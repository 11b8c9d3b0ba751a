"""Coalition characteristic function and its cost terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Iterable

from .model import BatteryState, MarketState, Microgrid, ValidationError, relevant_capacity


@dataclass(frozen=True)
class CostModel:
    """Per-trade cost coefficients.

    Attributes:
        delta_coeff: Degradation cost per cycle already performed.
        maintenance_cost: Flat operating cost charged once per non-empty coalition.
    """

    delta_coeff: float = 0.0002
    maintenance_cost: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_coeff < 1.0:
            raise ValidationError(f"delta_coeff must be in (0, 1), got {self.delta_coeff}")
        if self.maintenance_cost < 0:
            raise ValidationError("maintenance_cost must be >= 0")

    def scaled(self, k: float) -> "CostModel":
        return CostModel(self.delta_coeff * k, self.maintenance_cost * k)


@dataclass(frozen=True)
class CoalitionValue:
    value: float
    traded_energy: float
    total_degradation_cost: float
    operating_cost: float


@dataclass(frozen=True)
class SuperadditivityReport:
    holds: bool
    lhs: float
    rhs: float


def degradation_cost(b: BatteryState, cm: CostModel) -> float:
    return cm.delta_coeff * b.cycles_used


def traded_energy(coalition: Iterable[Microgrid], market: MarketState) -> float:
    """Energy the coalition would actually trade: capacity capped by the market."""
    return min(relevant_capacity(coalition, market), market.magnitude)


def characteristic_value(
    coalition: Collection[Microgrid], market: MarketState, cm: CostModel
) -> CoalitionValue:
    """Value a coalition generates by trading with ``market``.

    Revenue (deficit) or savings (surplus) is ``price * traded`` where the
    traded energy is capped by the market quantity; degradation and
    maintenance costs are subtracted. The empty coalition is worth 0.
    """
    members = list(coalition)
    if not members:
        return CoalitionValue(0.0, 0.0, 0.0, 0.0)
    traded = traded_energy(members, market)
    degradation = sum(degradation_cost(m.battery, cm) for m in members)
    operating = cm.maintenance_cost
    return CoalitionValue(
        value=market.price * traded - degradation - operating,
        traded_energy=traded,
        total_degradation_cost=degradation,
        operating_cost=operating,
    )


def superadditivity_check(
    c1: Collection[Microgrid],
    c2: Collection[Microgrid],
    market: MarketState,
    cm: CostModel,
    tol: float = 1e-9,
) -> SuperadditivityReport:
    """Compare v(c1 | c2) against v(c1) + v(c2) for disjoint coalitions.

    ``tol`` is relative to the larger magnitude and absorbs rounding in the
    summed capacities; a genuine shortfall is reported as ``holds=False``.
    """
    ids1 = {m.id for m in c1}
    ids2 = {m.id for m in c2}
    if ids1 & ids2:
        raise ValueError(f"coalitions overlap on {sorted(ids1 & ids2)}")
    lhs = characteristic_value(list(c1) + list(c2), market, cm).value
    rhs = characteristic_value(c1, market, cm).value + characteristic_value(c2, market, cm).value
    slack = tol * max(1.0, abs(lhs), abs(rhs))
    return SuperadditivityReport(holds=lhs >= rhs - slack, lhs=lhs, rhs=rhs)
