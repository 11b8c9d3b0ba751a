"""Microgrid, battery and market state types.

All types are frozen dataclasses; state transitions return new values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable

ENERGY_TOL = 1e-9  # kWh


class ValidationError(ValueError):
    """Raised when a domain value violates one of its invariants."""


class BatteryStatus(enum.Enum):
    FULLY_CHARGED = "fully_charged"
    PARTIALLY_CHARGED = "partially_charged"
    DISCHARGED = "discharged"


class MarketStatus(enum.Enum):
    DEFICIT = "deficit"
    SURPLUS = "surplus"


@dataclass(frozen=True)
class BatteryState:
    """Storage battery attached to a microgrid.

    Attributes:
        stored_energy: Energy currently held, kWh.
        remaining_cycles: Charge/discharge cycles left before end of life.
        capacity: Maximum storable energy, kWh.
        cycles_used: Cycles performed so far.
        charge_efficiency: Fraction of input energy retained when charging.
        discharge_efficiency: Fraction of drawn energy delivered when discharging.
    """

    stored_energy: float
    remaining_cycles: int
    capacity: float
    cycles_used: int = 0
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise ValidationError(f"capacity must be > 0, got {self.capacity}")
        if not 0.0 <= self.stored_energy <= self.capacity:
            raise ValidationError(
                f"stored_energy {self.stored_energy} outside [0, {self.capacity}]"
            )
        if self.remaining_cycles < 0 or self.cycles_used < 0:
            raise ValidationError("cycle counts must be non-negative")
        for name in ("charge_efficiency", "discharge_efficiency"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValidationError(f"{name} must be in (0, 1], got {eta}")

    @property
    def free_capacity(self) -> float:
        return self.capacity - self.stored_energy


@dataclass(frozen=True)
class Microgrid:
    id: str
    battery: BatteryState
    delta_energy: float = 0.0


@dataclass(frozen=True)
class Community:
    """Ordered collection of microgrids; the order fixes the flag encoding."""

    microgrids: tuple[Microgrid, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "microgrids", tuple(self.microgrids))
        if not self.microgrids:
            raise ValidationError("community must contain at least one microgrid")
        ids = [m.id for m in self.microgrids]
        if len(set(ids)) != len(ids):
            raise ValidationError("microgrid ids must be unique within a community")

    @property
    def n(self) -> int:
        return len(self.microgrids)

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.microgrids]

    def __len__(self) -> int:
        return len(self.microgrids)

    def __iter__(self):
        return iter(self.microgrids)

    def __getitem__(self, i: int) -> Microgrid:
        return self.microgrids[i]


@dataclass(frozen=True)
class MarketState:
    """Market imbalance at the trading hour.

    ``quantity`` is signed: negative for a deficit (the market wants energy),
    positive for a surplus (the market offers energy).
    """

    quantity: float
    price: float

    def __post_init__(self) -> None:
        if self.quantity == 0:
            raise ValidationError("market quantity 0 is degenerate: nothing to trade")
        if not self.price > 0:
            raise ValidationError(f"market price must be > 0, got {self.price}")

    @property
    def status(self) -> MarketStatus:
        return MarketStatus.DEFICIT if self.quantity < 0 else MarketStatus.SURPLUS

    @property
    def magnitude(self) -> float:
        return abs(self.quantity)


def battery_status(b: BatteryState) -> BatteryStatus:
    if abs(b.stored_energy - b.capacity) <= ENERGY_TOL:
        return BatteryStatus.FULLY_CHARGED
    if abs(b.stored_energy) <= ENERGY_TOL:
        return BatteryStatus.DISCHARGED
    return BatteryStatus.PARTIALLY_CHARGED


def update_stored_energy(b: BatteryState, delta: float) -> BatteryState:
    """Apply one hour of net energy ``delta`` (produced minus consumed) to ``b``.

    Charging stores ``charge_efficiency * delta``; discharging draws
    ``|delta| / discharge_efficiency``. The result is clamped to
    ``[0, capacity]`` and any actual change consumes one cycle.
    """
    if delta > 0:
        stored = b.stored_energy + b.charge_efficiency * delta
    elif delta < 0:
        stored = b.stored_energy - abs(delta) / b.discharge_efficiency
    else:
        return b
    stored = min(max(stored, 0.0), b.capacity)
    if stored == b.stored_energy:
        return b
    return replace(
        b,
        stored_energy=stored,
        cycles_used=b.cycles_used + 1,
        remaining_cycles=max(b.remaining_cycles - 1, 0),
    )


def sell_capacity(coalition: Iterable[Microgrid]) -> float:
    """Energy the coalition can deliver to a market in deficit."""
    return float(sum(m.battery.stored_energy for m in coalition))


def buy_capacity(coalition: Iterable[Microgrid]) -> float:
    """Free storage the coalition can fill from a market in surplus."""
    return float(sum(m.battery.free_capacity for m in coalition))


def relevant_capacity(coalition: Iterable[Microgrid], market: MarketState) -> float:
    if market.status is MarketStatus.DEFICIT:
        return sell_capacity(coalition)
    return buy_capacity(coalition)
