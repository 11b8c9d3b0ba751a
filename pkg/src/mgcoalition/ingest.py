"""Prosumer time-series ingestion and hourly aggregation.

Raw data arrives as delimiter-separated rows at 15-minute cadence, one row
per prosumer and interval. Column names are supplied by a
:class:`ColumnMapping` because source datasets differ in schema.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

from .model import BatteryState, Community, MarketState, Microgrid, ValidationError, update_stored_energy
from .scenario import MAX_CYCLES, Scenario
from .valuation import CostModel

logger = logging.getLogger(__name__)

INTERVALS_PER_HOUR = 4


@dataclass(frozen=True)
class ProsumerRecord:
    prosumer_id: str
    timestamp: datetime
    energy_produced: float
    energy_consumed: float
    price: float | None = None
    capacity: float | None = None
    stored_energy: float | None = None
    market_quantity: float | None = None

    def __post_init__(self) -> None:
        if self.energy_produced < 0 or self.energy_consumed < 0:
            raise ValidationError(
                f"{self.prosumer_id} @ {self.timestamp}: energies must be non-negative"
            )


@dataclass(frozen=True)
class HourlyRecord:
    prosumer_id: str
    hour: datetime
    energy_produced: float
    energy_consumed: float
    price: float | None = None
    capacity: float | None = None
    stored_energy: float | None = None
    market_quantity: float | None = None

    @property
    def delta_energy(self) -> float:
        return self.energy_produced - self.energy_consumed


@dataclass
class AggregationReport:
    hourly: list[HourlyRecord]
    dropped_hours: list[tuple[str, datetime, int]] = field(default_factory=list)
    duplicates: list[tuple[str, datetime]] = field(default_factory=list)
    out_of_order: list[tuple[str, datetime]] = field(default_factory=list)


@dataclass(frozen=True)
class ColumnMapping:
    """Maps source column names onto :class:`ProsumerRecord` fields.

    Optional columns may be ``None`` when the source lacks them.
    """

    prosumer_id: str = "prosumer_id"
    timestamp: str = "timestamp"
    energy_produced: str = "energy_produced"
    energy_consumed: str = "energy_consumed"
    price: str | None = "price"
    capacity: str | None = None
    stored_energy: str | None = None
    market_quantity: str | None = None
    delimiter: str = ","
    timestamp_format: str | None = None  # None means ISO 8601

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMapping":
        cols = dict(d.get("columns", {}))
        known = set(cls.__dataclass_fields__)
        unknown = (set(cols) | set(d) - {"columns"}) - known
        if unknown:
            raise ValueError(f"unknown mapping keys: {sorted(unknown)}")
        opts = {k: v for k, v in d.items() if k != "columns"}
        return cls(**cols, **opts)

    @classmethod
    def load(cls, path: str | Path) -> "ColumnMapping":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class BatteryDefaults:
    capacity: float = 13.5
    initial_stored_fraction: float = 0.5
    cycles_used: int = 0
    max_cycles: int = MAX_CYCLES
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95


def _opt_float(row: dict, col: str | None, where: str) -> float | None:
    if col is None:
        return None
    raw = row.get(col)
    if raw is None or raw.strip() == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"{where}: column {col!r}: not a number: {raw!r}") from None


def _req_float(row: dict, col: str, where: str) -> float:
    value = _opt_float(row, col, where)
    if value is None:
        raise ValidationError(f"{where}: column {col!r}: missing value")
    return value


def read_prosumer_csv(path: str | Path, mapping: ColumnMapping) -> list[ProsumerRecord]:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=mapping.delimiter)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: missing header row")
        required = [mapping.prosumer_id, mapping.timestamp, mapping.energy_produced, mapping.energy_consumed]
        optional = [mapping.price, mapping.capacity, mapping.stored_energy, mapping.market_quantity]
        missing = [c for c in required + [c for c in optional if c] if c not in reader.fieldnames]
        if missing:
            raise ValidationError(f"{path}: header lacks mapped columns {missing}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            ts_raw = row[mapping.timestamp]
            try:
                if mapping.timestamp_format:
                    ts = datetime.strptime(ts_raw, mapping.timestamp_format)
                else:
                    ts = datetime.fromisoformat(ts_raw)
            except ValueError:
                raise ValidationError(f"{where}: bad timestamp {ts_raw!r}") from None
            records.append(
                ProsumerRecord(
                    prosumer_id=row[mapping.prosumer_id],
                    timestamp=ts,
                    energy_produced=_req_float(row, mapping.energy_produced, where),
                    energy_consumed=_req_float(row, mapping.energy_consumed, where),
                    price=_opt_float(row, mapping.price, where),
                    capacity=_opt_float(row, mapping.capacity, where),
                    stored_energy=_opt_float(row, mapping.stored_energy, where),
                    market_quantity=_opt_float(row, mapping.market_quantity, where),
                )
            )
    return records


def _hour_of(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def _first(values: Iterable[float | None]) -> float | None:
    return next((v for v in values if v is not None), None)


def aggregate_hourly(records: Sequence[ProsumerRecord]) -> AggregationReport:
    """Sum 15-minute samples into clock hours per prosumer.

    Hours with fewer than four distinct samples are dropped and reported.
    Duplicate timestamps keep the first occurrence. Interval prices are
    averaged; market quantities are summed like energies.
    """
    report = AggregationReport(hourly=[])
    by_prosumer: dict[str, list[ProsumerRecord]] = defaultdict(list)
    for r in records:
        by_prosumer[r.prosumer_id].append(r)

    for pid in sorted(by_prosumer):
        seen: dict[datetime, ProsumerRecord] = {}
        last = None
        for r in by_prosumer[pid]:
            if last is not None and r.timestamp < last:
                report.out_of_order.append((pid, r.timestamp))
            last = r.timestamp if last is None else max(last, r.timestamp)
            if r.timestamp in seen:
                report.duplicates.append((pid, r.timestamp))
                continue
            seen[r.timestamp] = r
        hours: dict[datetime, list[ProsumerRecord]] = defaultdict(list)
        for ts in sorted(seen):
            hours[_hour_of(ts)].append(seen[ts])
        for hour, samples in hours.items():
            if len(samples) < INTERVALS_PER_HOUR:
                report.dropped_hours.append((pid, hour, len(samples)))
                logger.warning(
                    "prosumer %s: hour %s has %d/%d samples, dropped",
                    pid, hour.isoformat(), len(samples), INTERVALS_PER_HOUR,
                )
                continue
            prices = [s.price for s in samples if s.price is not None]
            market = [s.market_quantity for s in samples if s.market_quantity is not None]
            report.hourly.append(
                HourlyRecord(
                    prosumer_id=pid,
                    hour=hour,
                    energy_produced=sum(s.energy_produced for s in samples),
                    energy_consumed=sum(s.energy_consumed for s in samples),
                    price=sum(prices) / len(prices) if prices else None,
                    capacity=_first(s.capacity for s in samples),
                    stored_energy=_first(s.stored_energy for s in samples),
                    market_quantity=sum(market) if market else None,
                )
            )
    for pid, ts in report.duplicates:
        logger.warning("prosumer %s: duplicate timestamp %s ignored", pid, ts.isoformat())
    return report


def build_scenario(
    hourly: Sequence[HourlyRecord],
    hour: datetime,
    defaults: BatteryDefaults | None = None,
    cost_model: CostModel | None = None,
    market: MarketState | None = None,
    source: str = "",
    label: str | None = None,
) -> Scenario:
    """Community snapshot at ``hour`` with each prosumer's net energy applied.

    The market quantity is never inferred from prosumer balances: it comes
    from ``market`` or from a mapped market column in the data.
    """
    defaults = defaults or BatteryDefaults()
    cost_model = cost_model or CostModel()
    at_hour = sorted((h for h in hourly if h.hour == hour), key=lambda h: h.prosumer_id)
    if not at_hour:
        raise ValidationError(f"no prosumer data for hour {hour.isoformat()}")
    present = {h.prosumer_id for h in at_hour}
    excluded = sorted({h.prosumer_id for h in hourly} - present)
    for pid in excluded:
        logger.info("prosumer %s has no data at %s, excluded", pid, hour.isoformat())

    microgrids = []
    fallbacks: dict[str, list[str]] = {}
    for h in at_hour:
        used = []
        capacity = h.capacity
        if capacity is None:
            capacity = defaults.capacity
            used.append("capacity")
        stored = h.stored_energy
        if stored is None:
            stored = defaults.initial_stored_fraction * capacity
            used.append("stored_energy")
        if used:
            fallbacks[h.prosumer_id] = used
        battery = BatteryState(
            stored_energy=min(max(stored, 0.0), capacity),
            remaining_cycles=defaults.max_cycles - defaults.cycles_used,
            capacity=capacity,
            cycles_used=defaults.cycles_used,
            charge_efficiency=defaults.charge_efficiency,
            discharge_efficiency=defaults.discharge_efficiency,
        )
        battery = update_stored_energy(battery, h.delta_energy)
        microgrids.append(Microgrid(h.prosumer_id, battery, h.delta_energy))

    if market is None:
        quantity = _first(h.market_quantity for h in at_hour)
        prices = [h.price for h in at_hour if h.price is not None]
        if quantity is None:
            raise ValidationError(
                "market quantity unavailable: supply it explicitly or map a market column"
            )
        if not prices:
            raise ValidationError("market price unavailable: supply it explicitly or map a price column")
        market = MarketState(quantity=quantity, price=sum(prices) / len(prices))

    provenance = {
        "kind": "ingested",
        "source": source,
        "hour": hour.isoformat(),
        "excluded": excluded,
        "defaults_used": fallbacks,
    }
    return Scenario(
        community=Community(tuple(microgrids)),
        market=market,
        cost_model=cost_model,
        label=label if label is not None else f"ingested-{hour.isoformat()}",
        provenance=provenance,
    )
