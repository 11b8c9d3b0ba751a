"""Parameter sweeps, stability studies and coalition reports.

Every table is written as CSV with a ``#``-prefixed header carrying the
format version, seed and effective configuration. Result tables contain no
timing so that reruns are byte-identical; wall times go to ``timing.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .model import MarketStatus, update_stored_energy
from .optimizer import OptimizerConfig, RunResult, run
from .scenario import Scenario
from .shapley import allocation_report

logger = logging.getLogger(__name__)

CSV_FORMAT = "mgcoalition-csv/1"
AXES = ("pop_size", "generations", "cooling_alpha")

FULL_POP = tuple(range(20, 301, 10))
FULL_GEN = tuple(range(20, 301, 10))
# alpha = 1.0 never cools, so the annealing loop would not terminate
FULL_COOLING = tuple(round(0.1 * i, 1) for i in range(1, 10))

REDUCED_POP = (20, 100, 180)
REDUCED_GEN = (20, 100, 180)
REDUCED_COOLING = (0.1, 0.5, 0.9)

AXIS_POP = (20, 60, 100, 140, 180)
AXIS_GEN = (20, 60, 100, 140, 180)
AXIS_COOLING = (0.1, 0.3, 0.5, 0.7, 0.9)
AXIS_FIXED = {"pop_size": 100, "generations": 100, "cooling_alpha": 0.5}


# ---------------------------------------------------------------- statistics


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation, average ranks for ties.

    Returns NaN when either input is constant.
    """
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    return pearson(stats.rankdata(x), stats.rankdata(y))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < 2:
        return math.nan
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return math.nan
    return max(-1.0, min(1.0, float(dx @ dy) / denom))


# ---------------------------------------------------------------- CSV output


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(columns: Sequence[str], rows: Iterable[dict], meta: dict[str, Any] | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# format: {CSV_FORMAT}\n")
    for key, value in (meta or {}).items():
        if not isinstance(value, str):
            value = json.dumps(value, sort_keys=True)
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, columns, rows, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(columns, rows, meta), encoding="utf-8")
    return path


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def config_meta(cfg: OptimizerConfig) -> dict[str, Any]:
    return asdict(cfg)


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepSpec:
    """Sweep definition.

    ``mode="grid"`` runs the cartesian product of the three value lists.
    ``mode="axis"`` varies one parameter at a time with the others held at
    ``fixed``; ``axes`` picks which parameters are varied.
    """

    pop_sizes: tuple[int, ...] = REDUCED_POP
    generations: tuple[int, ...] = REDUCED_GEN
    cooling: tuple[float, ...] = REDUCED_COOLING
    repeats: int = 10
    base_config: OptimizerConfig = field(default_factory=OptimizerConfig)
    base_seed: int = 0
    mode: str = "grid"
    fixed: dict[str, float] = field(default_factory=lambda: dict(AXIS_FIXED))
    axes: tuple[str, ...] = AXES

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not (self.pop_sizes and self.generations and self.cooling):
            raise ValueError("sweep ranges must be non-empty")
        if self.mode not in ("grid", "axis"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        unknown = set(self.axes) - set(AXES)
        if unknown:
            raise ValueError(f"unknown axes {sorted(unknown)}")

    @classmethod
    def reduced(cls, **kw) -> "SweepSpec":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "SweepSpec":
        kw.setdefault("repeats", 50)
        return cls(FULL_POP, FULL_GEN, FULL_COOLING, **kw)

    @classmethod
    def reduced_axes(cls, **kw) -> "SweepSpec":
        return cls(AXIS_POP, AXIS_GEN, AXIS_COOLING, mode="axis", **kw)

    def cells(self) -> list[dict[str, Any]]:
        if self.mode == "grid":
            return [
                {"axis": "grid", "pop_size": p, "generations": g, "cooling_alpha": a}
                for p in self.pop_sizes
                for g in self.generations
                for a in self.cooling
            ]
        values = {"pop_size": self.pop_sizes, "generations": self.generations, "cooling_alpha": self.cooling}
        cells = []
        for axis in self.axes:
            for v in values[axis]:
                cell = {"axis": axis, **{k: self.fixed[k] for k in AXES}}
                cell[axis] = v
                cells.append(cell)
        return cells


@dataclass
class SweepResult:
    runs: list[dict[str, Any]]
    cells: list[dict[str, Any]]
    spearman: dict[str, float]
    spearman_fitness: dict[str, float]
    timing: list[dict[str, Any]]


def _run_one(args) -> tuple[dict[str, Any], float]:
    scenario, cfg = args
    try:
        result = run(scenario, cfg)
    except Exception as exc:  # recorded per cell, never aborts the sweep
        return {"status": f"error: {exc}"}, math.nan
    return (
        {
            "status": "ok",
            "final_fitness": result.best_fitness,
            "final_objective": result.best_objective,
            "coalition_size": len(result.best_coalition),
        },
        result.wall_time,
    )


def _map(fn, jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


def sweep(spec: SweepSpec, scenario: Scenario, n_jobs: int = 1) -> SweepResult:
    """Run every cell ``spec.repeats`` times with seeds ``base_seed + repeat``.

    Cell aggregates and per-axis Spearman correlations use the final raw
    objective (coalition value minus penalty) of each run's best
    individual; the z-scored fitness is reported alongside.
    """
    cells = spec.cells()
    jobs, keys = [], []
    for ci, cell in enumerate(cells):
        for rep in range(spec.repeats):
            cfg = replace(
                spec.base_config,
                pop_size=int(cell["pop_size"]),
                generations=int(cell["generations"]),
                cooling_alpha=float(cell["cooling_alpha"]),
                seed=spec.base_seed + rep,
            )
            jobs.append((scenario, cfg))
            keys.append((ci, rep, cfg.seed))
    outcomes = _map(_run_one, jobs, n_jobs)

    runs, timing = [], []
    for (ci, rep, seed), (row, wall) in zip(keys, outcomes):
        cell = cells[ci]
        base = {"cell": ci, **cell, "repeat": rep, "seed": seed}
        runs.append({**base, **row})
        timing.append({**base, "wall_time": wall})

    summary = []
    for ci, cell in enumerate(cells):
        ok = [r for r in runs if r["cell"] == ci and r["status"] == "ok"]
        objs = [r["final_objective"] for r in ok]
        fits = [r["final_fitness"] for r in ok]
        summary.append(
            {
                "cell": ci,
                **cell,
                "runs": len(ok),
                "failures": spec.repeats - len(ok),
                "mean_objective": statistics.fmean(objs) if objs else math.nan,
                "std_objective": statistics.pstdev(objs) if objs else math.nan,
                "mean_fitness": statistics.fmean(fits) if fits else math.nan,
                "std_fitness": statistics.pstdev(fits) if fits else math.nan,
            }
        )
        if len(ok) < spec.repeats:
            logger.warning("cell %d: %d of %d runs failed", ci, spec.repeats - len(ok), spec.repeats)

    rho_obj, rho_fit = {}, {}
    for axis in AXES:
        if spec.mode == "axis":
            group = [c for c in summary if c["axis"] == axis]
        else:
            group = summary
        group = [c for c in group if not math.isnan(c["mean_objective"])]
        if len({c[axis] for c in group}) < 2:
            continue
        xs = [c[axis] for c in group]
        rho_obj[axis] = spearman(xs, [c["mean_objective"] for c in group])
        rho_fit[axis] = spearman(xs, [c["mean_fitness"] for c in group])
    return SweepResult(runs, summary, rho_obj, rho_fit, timing)


RUN_COLUMNS = [
    "cell", "axis", "pop_size", "generations", "cooling_alpha", "repeat", "seed",
    "status", "final_fitness", "final_objective", "coalition_size",
]
SUMMARY_COLUMNS = [
    "cell", "axis", "pop_size", "generations", "cooling_alpha", "runs", "failures",
    "mean_objective", "std_objective", "mean_fitness", "std_fitness",
]
TIMING_COLUMNS = ["cell", "axis", "pop_size", "generations", "cooling_alpha", "repeat", "seed", "wall_time"]


def write_sweep(result: SweepResult, spec: SweepSpec, out_dir: str | Path, scenario_label: str = "") -> None:
    out = Path(out_dir)
    meta = {
        "scenario": scenario_label,
        "mode": spec.mode,
        "repeats": spec.repeats,
        "base_seed": spec.base_seed,
        "config": config_meta(spec.base_config),
    }
    write_csv(out / "runs.csv", RUN_COLUMNS, result.runs, meta)
    spearman_meta = {
        **meta,
        "spearman_objective": {k: round(v, 12) for k, v in result.spearman.items()},
        "spearman_fitness": {k: round(v, 12) for k, v in result.spearman_fitness.items()},
    }
    write_csv(out / "sweep_summary.csv", SUMMARY_COLUMNS, result.cells, spearman_meta)
    rows = [
        {"axis": a, "spearman_objective": result.spearman[a], "spearman_fitness": result.spearman_fitness.get(a, math.nan)}
        for a in result.spearman
    ]
    write_csv(out / "spearman.csv", ["axis", "spearman_objective", "spearman_fitness"], rows, meta)
    write_csv(out / "timing.csv", TIMING_COLUMNS, result.timing, meta)


# ---------------------------------------------------------------- stability


@dataclass
class StabilityResult:
    seeds: list[int]
    final_objective: list[float]
    final_fitness: list[float]
    coalitions: list[list[str]]
    traces: list[list]
    mean_objective: float
    std_objective: float
    cov_objective: float
    wall_times: list[float]


def stability_study(scenario: Scenario, cfg: OptimizerConfig, n_runs: int, n_jobs: int = 1) -> StabilityResult:
    """Repeat the run from ``n_runs`` distinct seeds (``cfg.seed + i``)."""
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    seeds = [cfg.seed + i for i in range(n_runs)]
    results: list[RunResult] = _map(_run_full, [(scenario, replace(cfg, seed=s)) for s in seeds], n_jobs)
    objs = [r.best_objective for r in results]
    mean = statistics.fmean(objs)
    std = statistics.pstdev(objs)
    cov = std / abs(mean) if mean != 0 else (0.0 if std == 0 else math.inf)
    return StabilityResult(
        seeds=seeds,
        final_objective=objs,
        final_fitness=[r.best_fitness for r in results],
        coalitions=[r.best_coalition for r in results],
        traces=[r.trace for r in results],
        mean_objective=mean,
        std_objective=std,
        cov_objective=cov,
        wall_times=[r.wall_time for r in results],
    )


def _run_full(args) -> RunResult:
    scenario, cfg = args
    return run(scenario, cfg)


TRACE_COLUMNS = ["run_id", "generation", "best", "mean", "diversity", "best_objective", "best_value"]


def trace_rows(trace, run_id: int = 0) -> list[dict[str, Any]]:
    return [
        {
            "run_id": run_id,
            "generation": t.generation,
            "best": t.best_fitness,
            "mean": t.mean_fitness,
            "diversity": t.diversity,
            "best_objective": t.best_objective,
            "best_value": t.best_value,
        }
        for t in trace
    ]


def write_stability(result: StabilityResult, cfg: OptimizerConfig, out_dir: str | Path, scenario_label: str = "") -> None:
    out = Path(out_dir)
    meta = {"scenario": scenario_label, "config": config_meta(cfg), "seeds": result.seeds}
    rows = [
        {
            "run_id": i,
            "seed": s,
            "final_fitness": result.final_fitness[i],
            "final_objective": result.final_objective[i],
            "coalition": " ".join(result.coalitions[i]),
        }
        for i, s in enumerate(result.seeds)
    ]
    stats_meta = {
        **meta,
        "mean_objective": result.mean_objective,
        "std_objective": result.std_objective,
        "cov_objective": result.cov_objective,
    }
    write_csv(out / "stability.csv", ["run_id", "seed", "final_fitness", "final_objective", "coalition"], rows, stats_meta)
    for i, trace in enumerate(result.traces):
        write_csv(out / f"trace_run{i}.csv", TRACE_COLUMNS, trace_rows(trace, i), {**meta, "seed": result.seeds[i]})
    timing = [{"run_id": i, "seed": s, "wall_time": w} for i, (s, w) in enumerate(zip(result.seeds, result.wall_times))]
    write_csv(out / "timing.csv", ["run_id", "seed", "wall_time"], timing, meta)


# ---------------------------------------------------------------- coalition report


@dataclass
class CoalitionReport:
    membership: list[dict[str, Any]]
    cycles: list[dict[str, Any]]
    levels: list[dict[str, Any]]
    allocation: list[dict[str, Any]]
    correlations: list[dict[str, Any]]


def simulate_trade(result: RunResult, scenario: Scenario) -> list[dict[str, Any]]:
    """Battery levels of coalition members before and after the trade.

    The traded energy is split across members in proportion to their
    relevant capacity; each battery moves by exactly its share.
    """
    market = scenario.market
    members = [m for m in scenario.community if m.id in set(result.best_coalition)]
    deficit = market.status is MarketStatus.DEFICIT
    caps = [m.battery.stored_energy if deficit else m.battery.free_capacity for m in members]
    total = sum(caps)
    traded = result.characteristic.traded_energy
    rows = []
    for m, cap in zip(members, caps):
        share = traded * cap / total if total > 0 else 0.0
        b = m.battery
        if deficit:
            after = update_stored_energy(b, -share * b.discharge_efficiency)
        else:
            after = update_stored_energy(b, share / b.charge_efficiency)
        rows.append(
            {
                "id": m.id,
                "traded_kwh": share,
                "stored_before": b.stored_energy,
                "stored_after": after.stored_energy,
                "capacity": b.capacity,
                "remaining_cycles_after": after.remaining_cycles,
            }
        )
    return rows


def coalition_report(result: RunResult, scenario: Scenario) -> CoalitionReport:
    chosen = set(result.best_coalition)
    membership = [
        {
            "id": m.id,
            "included": m.id in chosen,
            "stored_energy": m.battery.stored_energy,
            "capacity": m.battery.capacity,
            "free_capacity": m.battery.free_capacity,
            "remaining_cycles": m.battery.remaining_cycles,
            "cycles_used": m.battery.cycles_used,
        }
        for m in scenario.community
    ]
    cycles = []
    for included in (True, False):
        values = [r["remaining_cycles"] for r in membership if r["included"] is included]
        cycles.append(
            {
                "group": "included" if included else "excluded",
                "count": len(values),
                "min": min(values) if values else "",
                "median": float(statistics.median(values)) if values else "",
                "mean": statistics.fmean(values) if values else "",
                "max": max(values) if values else "",
            }
        )
    members = [m for m in scenario.community if m.id in chosen]
    allocation = allocation_report(result.allocation, members, scenario.market, scenario.cost_model)
    correlations = []
    if len(allocation) >= 2:
        series = {
            "energy": [r["energy_contribution_kwh"] for r in allocation],
            "cost": [r["degradation_cost"] for r in allocation],
            "shapley": [r["shapley_value"] for r in allocation],
        }
        for a, b in (("energy", "cost"), ("energy", "shapley"), ("cost", "shapley")):
            r = pearson(series[a], series[b])
            if not math.isnan(r):
                correlations.append({"x": a, "y": b, "pearson": r})
    return CoalitionReport(membership, cycles, simulate_trade(result, scenario), allocation, correlations)


def write_run_outputs(result: RunResult, scenario: Scenario, out_dir: str | Path) -> list[Path]:
    """Write coalition.csv, allocation.csv, trace.csv and companions for one run."""
    out = Path(out_dir)
    report = coalition_report(result, scenario)
    meta = {
        "scenario": scenario.label,
        "seed": result.seed,
        "config": config_meta(result.config),
        "best_fitness": result.best_fitness,
        "best_objective": result.best_objective,
        "coalition_value": result.characteristic.value,
        "traded_energy": result.characteristic.traded_energy,
        "allocation_method": result.allocation.method,
    }
    levels = {r["id"]: r for r in report.levels}
    coalition_rows = [
        {**r, "stored_after": levels.get(r["id"], {}).get("stored_after", r["stored_energy"])}
        for r in report.membership
    ]
    return [
        write_csv(
            out / "coalition.csv",
            ["id", "included", "stored_energy", "stored_after", "capacity", "free_capacity", "remaining_cycles", "cycles_used"],
            coalition_rows,
            meta,
        ),
        write_csv(out / "cycles.csv", ["group", "count", "min", "median", "mean", "max"], report.cycles, meta),
        write_csv(
            out / "levels.csv",
            ["id", "traded_kwh", "stored_before", "stored_after", "capacity", "remaining_cycles_after"],
            report.levels,
            meta,
        ),
        write_csv(
            out / "allocation.csv",
            ["id", "energy_contribution_kwh", "degradation_cost", "shapley_value"],
            report.allocation,
            meta,
        ),
        write_csv(out / "correlations.csv", ["x", "y", "pearson"], report.correlations, meta),
        write_csv(out / "trace.csv", TRACE_COLUMNS, trace_rows(result.trace), meta),
    ]
