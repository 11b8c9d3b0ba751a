"""Scenario container, versioned JSON file format and synthetic generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .model import (
    BatteryState,
    Community,
    MarketState,
    Microgrid,
    ValidationError,
)
from .valuation import CostModel

SCENARIO_FORMAT = "mgcoalition-scenario/1"
MAX_CYCLES = 6000


class ScenarioFormatError(ValidationError):
    """A scenario file is malformed or violates a domain invariant."""


@dataclass(frozen=True)
class Scenario:
    """One optimisation problem: a community, a market snapshot and cost terms.

    ``provenance`` records where the scenario came from, e.g.
    ``{"kind": "synthetic", "seed": 7}`` or
    ``{"kind": "ingested", "source": "data.csv", "hour": "..."}``.
    """

    community: Community
    market: MarketState
    cost_model: CostModel
    label: str = ""
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.community.n


@dataclass(frozen=True)
class SyntheticRanges:
    capacity: tuple[float, float] = (12.5, 15.5)
    weibull_shape: float = 2.0
    weibull_scale: float = 0.5
    max_cycles: int = MAX_CYCLES
    market_status: str = "deficit"
    # market quantity as a fraction of the community's relevant capacity
    market_share: tuple[float, float] = (0.3, 0.6)
    price: tuple[float, float] = (0.2, 0.4)
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    delta_coeff: float = 0.0002
    maintenance_cost: float = 0.5


def generate_synthetic(
    n: int, seed: int, ranges: SyntheticRanges | None = None, label: str | None = None
) -> Scenario:
    """Random community of ``n`` battery-equipped microgrids.

    Capacities are uniform over ``ranges.capacity``, stored energy uniform in
    ``[0, capacity]``, and battery wear follows a clamped Weibull draw scaled
    to ``max_cycles``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    r = ranges or SyntheticRanges()
    if r.market_status not in ("deficit", "surplus"):
        raise ValueError(f"unknown market status {r.market_status!r}")
    rng = np.random.default_rng(seed)
    capacity = rng.uniform(r.capacity[0], r.capacity[1], n)
    stored = rng.uniform(0.0, 1.0, n) * capacity
    wear = np.clip(r.weibull_scale * rng.weibull(r.weibull_shape, n), 0.0, 1.0)
    cycles_used = np.rint(r.max_cycles * wear).astype(int)
    share = rng.uniform(*r.market_share)
    price = rng.uniform(*r.price)

    width = max(2, len(str(n)))
    microgrids = []
    for i in range(n):
        battery = BatteryState(
            stored_energy=float(min(stored[i], capacity[i])),
            remaining_cycles=int(r.max_cycles - cycles_used[i]),
            capacity=float(capacity[i]),
            cycles_used=int(cycles_used[i]),
            charge_efficiency=r.charge_efficiency,
            discharge_efficiency=r.discharge_efficiency,
        )
        microgrids.append(Microgrid(id=f"MG{i + 1:0{width}d}", battery=battery))

    if r.market_status == "deficit":
        quantity = -share * float(stored.sum())
    else:
        quantity = share * float((capacity - stored).sum())
    if quantity == 0.0:
        quantity = -1e-3 if r.market_status == "deficit" else 1e-3
    return Scenario(
        community=Community(tuple(microgrids)),
        market=MarketState(quantity=quantity, price=float(price)),
        cost_model=CostModel(r.delta_coeff, r.maintenance_cost),
        label=label if label is not None else f"synthetic-n{n}-s{seed}",
        provenance={"kind": "synthetic", "seed": int(seed)},
    )


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    return {
        "format": SCENARIO_FORMAT,
        "label": s.label,
        "provenance": s.provenance,
        "market": {
            "quantity": s.market.quantity,
            "price": s.market.price,
            "status": s.market.status.value,
        },
        "cost_model": {
            "delta_coeff": s.cost_model.delta_coeff,
            "maintenance_cost": s.cost_model.maintenance_cost,
        },
        "microgrids": [
            {
                "id": m.id,
                "capacity": m.battery.capacity,
                "stored_energy": m.battery.stored_energy,
                "cycles_used": m.battery.cycles_used,
                "remaining_cycles": m.battery.remaining_cycles,
                "charge_efficiency": m.battery.charge_efficiency,
                "discharge_efficiency": m.battery.discharge_efficiency,
                "delta_energy": m.delta_energy,
            }
            for m in s.community
        ],
    }


def _require(obj: Any, key: str, kind, where: str):
    if not isinstance(obj, dict):
        raise ScenarioFormatError(f"{where}: expected an object")
    if key not in obj:
        raise ScenarioFormatError(f"{where}.{key}: missing field")
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and not math.isfinite(value):
            raise ScenarioFormatError(f"{where}.{key}: must be finite, got {value!r}")
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ScenarioFormatError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}"
        )
    return float(value) if kind is float else value


def scenario_from_dict(data: dict[str, Any], source: str = "<scenario>") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioFormatError(f"{source}: top level must be an object")
    fmt = data.get("format")
    if fmt != SCENARIO_FORMAT:
        raise ScenarioFormatError(f"{source}: format: expected {SCENARIO_FORMAT!r}, got {fmt!r}")
    try:
        market_d = data.get("market")
        market = MarketState(
            quantity=_require(market_d, "quantity", float, f"{source}: market"),
            price=_require(market_d, "price", float, f"{source}: market"),
        )
        status = market_d.get("status")
        if status is not None and status != market.status.value:
            raise ScenarioFormatError(
                f"{source}: market.status: {status!r} contradicts quantity {market.quantity}"
            )
    except ScenarioFormatError:
        raise
    except ValidationError as exc:
        raise ScenarioFormatError(f"{source}: market: {exc}") from None

    cm_d = data.get("cost_model")
    try:
        cm = CostModel(
            delta_coeff=_require(cm_d, "delta_coeff", float, f"{source}: cost_model"),
            maintenance_cost=_require(cm_d, "maintenance_cost", float, f"{source}: cost_model"),
        )
    except ScenarioFormatError:
        raise
    except ValidationError as exc:
        raise ScenarioFormatError(f"{source}: cost_model: {exc}") from None

    mgs = data.get("microgrids")
    if not isinstance(mgs, list) or not mgs:
        raise ScenarioFormatError(f"{source}: microgrids: expected a non-empty list")
    microgrids = []
    for i, d in enumerate(mgs):
        where = f"{source}: microgrids[{i}]"
        try:
            battery = BatteryState(
                stored_energy=_require(d, "stored_energy", float, where),
                remaining_cycles=_require(d, "remaining_cycles", int, where),
                capacity=_require(d, "capacity", float, where),
                cycles_used=_require(d, "cycles_used", int, where),
                charge_efficiency=_require(d, "charge_efficiency", float, where),
                discharge_efficiency=_require(d, "discharge_efficiency", float, where),
            )
            delta = float(d.get("delta_energy", 0.0))
            microgrids.append(Microgrid(_require(d, "id", str, where), battery, delta))
        except ScenarioFormatError:
            raise
        except ValidationError as exc:
            raise ScenarioFormatError(f"{where}: {exc}") from None
    try:
        community = Community(tuple(microgrids))
    except ValidationError as exc:
        raise ScenarioFormatError(f"{source}: microgrids: {exc}") from None
    provenance = data.get("provenance", {})
    if not isinstance(provenance, dict):
        raise ScenarioFormatError(f"{source}: provenance: expected an object")
    return Scenario(community, market, cm, str(data.get("label", "")), provenance)


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def loads_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    return scenario_from_dict(data, source)


def write_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


def read_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return loads_scenario(path.read_text(encoding="utf-8"), str(path))

