"""Command-line entry point.

Exit codes: 0 success, 1 IO or validation failure, 2 usage error,
3 scenario too large for the exhaustive oracle.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Sequence

from . import experiments
from .ingest import BatteryDefaults, ColumnMapping, aggregate_hourly, build_scenario, read_prosumer_csv
from .model import MarketState, ValidationError
from .optimizer import OptimizerConfig, run
from .oracle import ORACLE_LIMIT, OracleSizeError, coalition_objective, solve_exhaustive
from .scenario import SyntheticRanges, generate_synthetic, read_scenario, write_scenario
from .shapley import EXACT_LIMIT, allocation_report, exact_shapley, sampled_shapley
from .valuation import CostModel

CONFIG_FORMAT = "mgcoalition-config/1"
EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_SIZE = 0, 1, 2, 3

log = logging.getLogger("mgcoalition")

# flag name -> OptimizerConfig field
_OVERRIDES = {
    "pop_size": int,
    "generations": int,
    "init_active_pct": float,
    "selection_pressure": float,
    "penalty_rho": float,
    "elite_pct": float,
    "t_initial": float,
    "t_min": float,
    "cooling_alpha": float,
    "neighbour_bias": float,
}


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict) or data.get("format") != CONFIG_FORMAT:
        raise ValidationError(f"{path}: format: expected {CONFIG_FORMAT!r}")
    known = {f.name for f in fields(OptimizerConfig)}
    values = {k: v for k, v in data.items() if k != "format"}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config fields {sorted(unknown)}")
    return values


def config_to_json(cfg: OptimizerConfig) -> str:
    return json.dumps({"format": CONFIG_FORMAT, **asdict(cfg)}, indent=2) + "\n"


def effective_config(args: argparse.Namespace) -> OptimizerConfig:
    """Built-in defaults, then the config file, then command-line flags."""
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return OptimizerConfig(**values)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    g = p.add_argument_group("algorithm overrides")
    g.add_argument("--pop-size", dest="pop_size", type=int)
    g.add_argument("--generations", type=int)
    g.add_argument("--init-active-pct", dest="init_active_pct", type=float)
    g.add_argument("--selection-pressure", dest="selection_pressure", type=float)
    g.add_argument("--rho", dest="penalty_rho", type=float)
    g.add_argument("--elite-pct", dest="elite_pct", type=float)
    g.add_argument("--t0", dest="t_initial", type=float)
    g.add_argument("--t-min", dest="t_min", type=float)
    g.add_argument("--cooling", dest="cooling_alpha", type=float)
    g.add_argument("--neighbour-bias", dest="neighbour_bias", type=float)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _pair(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(",")
    try:
        pair = (float(lo), float(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    if pair[0] > pair[1]:
        raise argparse.ArgumentTypeError(f"LO > HI in {text!r}")
    return pair


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    defaults = SyntheticRanges()
    ranges = replace(
        defaults,
        capacity=args.capacity or defaults.capacity,
        market_status=args.market,
        market_share=args.market_share or defaults.market_share,
        price=args.price or defaults.price,
        delta_coeff=args.delta if args.delta is not None else defaults.delta_coeff,
        maintenance_cost=args.maintenance if args.maintenance is not None else defaults.maintenance_cost,
    )
    scenario = generate_synthetic(args.n, args.seed, ranges)
    write_scenario(scenario, args.out)
    sell = sum(m.battery.stored_energy for m in scenario.community)
    buy = sum(m.battery.free_capacity for m in scenario.community)
    print(
        f"n={scenario.n} market={scenario.market.status.value} quantity={scenario.market.quantity:.3f} "
        f"price={scenario.market.price:.4f} stored={sell:.3f} free={buy:.3f} -> {args.out}"
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    mapping = ColumnMapping.load(args.mapping) if args.mapping else ColumnMapping(delimiter=args.delimiter)
    records = read_prosumer_csv(args.input, mapping)
    report = aggregate_hourly(records)
    hour = datetime.fromisoformat(args.hour)
    market = None
    if args.market_quantity is not None or args.price is not None:
        if args.market_quantity is None or args.price is None:
            raise ValidationError("--market-quantity and --price must be given together")
        market = MarketState(args.market_quantity, args.price)
    defaults = BatteryDefaults(
        capacity=args.battery_capacity,
        initial_stored_fraction=args.initial_fraction,
    )
    scenario = build_scenario(
        report.hourly,
        hour,
        defaults,
        CostModel(args.delta, args.maintenance),
        market,
        source=str(args.input),
    )
    write_scenario(scenario, args.out)
    print(
        f"ingested {len(records)} rows, {len(report.hourly)} complete prosumer-hours "
        f"({len(report.dropped_hours)} dropped, {len(report.duplicates)} duplicates); "
        f"n={scenario.n} market={scenario.market.status.value} -> {args.out}"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = read_scenario(args.scenario)
    cfg = effective_config(args)
    result = run(scenario, cfg)
    experiments.write_run_outputs(result, scenario, args.out_dir)
    print(f"best objective {result.best_objective:.6f}  fitness {result.best_fitness:.6f}")
    print(f"coalition size {len(result.best_coalition)}: {' '.join(result.best_coalition)}")
    print(f"wall time {result.wall_time:.3f}s  seed {cfg.seed}  -> {args.out_dir}")
    return EXIT_OK


def verify(scenario, cfg: OptimizerConfig, seeds: Sequence[int], rho: float | None = None) -> dict[str, Any]:
    """Compare memetic runs against the exhaustive optimum."""
    rho = cfg.penalty_rho if rho is None else rho
    cfg = replace(cfg, penalty_rho=rho)
    started = time.perf_counter()
    oracle = solve_exhaustive(scenario, rho)
    rows = []
    for seed in seeds:
        result = run(scenario, replace(cfg, seed=seed))
        achieved = coalition_objective(scenario, result.best_coalition, rho)
        hit = math.isclose(achieved, oracle.best_objective, rel_tol=1e-9, abs_tol=1e-9)
        gap = oracle.best_objective - achieved
        rel = gap / abs(oracle.best_objective) if oracle.best_objective else gap
        rows.append(
            {
                "seed": seed,
                "objective": achieved,
                "hit": hit,
                "gap": gap,
                "relative_gap": rel,
                "coalition": " ".join(result.best_coalition),
            }
        )
    return {
        "optimum": oracle.best_objective,
        "optimum_coalition": oracle.best_coalition,
        "rows": rows,
        "hit_rate": sum(r["hit"] for r in rows) / len(rows) if rows else math.nan,
        "elapsed": time.perf_counter() - started,
    }


def cmd_verify(args) -> int:
    scenario = read_scenario(args.scenario)
    if scenario.n > args.limit:
        print(f"error: scenario has {scenario.n} microgrids, oracle limit is {args.limit}", file=sys.stderr)
        return EXIT_SIZE
    cfg = effective_config(args)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    report = verify(scenario, cfg, seeds)
    print(f"oracle optimum {report['optimum']:.6f}: {' '.join(report['optimum_coalition'])}")
    for r in report["rows"]:
        mark = "hit " if r["hit"] else "miss"
        print(f"  seed {r['seed']:>4}  {mark}  objective {r['objective']:.6f}  gap {r['relative_gap']:.2e}")
    print(f"hit rate {report['hit_rate']:.3f}  ({len(seeds)} seeds, {report['elapsed']:.1f}s)")
    if args.out:
        experiments.write_csv(
            args.out,
            ["seed", "objective", "hit", "gap", "relative_gap", "coalition"],
            report["rows"],
            {
                "scenario": scenario.label,
                "config": experiments.config_meta(cfg),
                "optimum": report["optimum"],
                "optimum_coalition": " ".join(report["optimum_coalition"]),
                "hit_rate": report["hit_rate"],
            },
        )
    return EXIT_OK


def cmd_shapley(args) -> int:
    scenario = read_scenario(args.scenario)
    if args.members:
        wanted = args.members.split(",")
    elif args.run_dir:
        rows = experiments.read_csv_rows(Path(args.run_dir) / "coalition.csv")
        wanted = [r["id"] for r in rows if r["included"] == "1"]
    else:
        wanted = scenario.community.ids
    by_id = {m.id: m for m in scenario.community}
    unknown = [w for w in wanted if w not in by_id]
    if unknown:
        raise ValidationError(f"unknown member ids {unknown}")
    members = [by_id[w] for w in wanted]
    method = args.method
    if method == "auto":
        method = "exact" if len(members) <= EXACT_LIMIT else "sampled"
    if method == "exact":
        if len(members) > EXACT_LIMIT:
            print(f"error: exact Shapley limited to {EXACT_LIMIT} members", file=sys.stderr)
            return EXIT_SIZE
        alloc = exact_shapley(members, scenario.market, scenario.cost_model)
    else:
        alloc = sampled_shapley(members, scenario.market, scenario.cost_model, args.permutations, args.seed)
    rows = allocation_report(alloc, members, scenario.market, scenario.cost_model)
    for r in rows:
        print(f"{r['id']:>8}  energy {r['energy_contribution_kwh']:9.4f}  cost {r['degradation_cost']:8.4f}  phi {r['shapley_value']:10.6f}")
    print(f"total {alloc.total():.6f}  v(N) {alloc.game_total:.6f}  method {alloc.method}")
    if args.out:
        experiments.write_csv(
            args.out,
            ["id", "energy_contribution_kwh", "degradation_cost", "shapley_value"],
            rows,
            {"scenario": scenario.label, "method": alloc.method, "seed": args.seed, "game_total": alloc.game_total},
        )
    return EXIT_OK


def _parse_fixed(text: str) -> dict[str, float]:
    names = {"pop": "pop_size", "gen": "generations", "cooling": "cooling_alpha"}
    fixed = dict(experiments.AXIS_FIXED)
    for part in filter(None, text.split(",")):
        key, _, value = part.partition("=")
        if key not in names:
            raise argparse.ArgumentTypeError(f"unknown fixed parameter {key!r}")
        fixed[names[key]] = float(value) if key == "cooling" else int(value)
    return fixed


def cmd_sweep(args) -> int:
    scenario = read_scenario(args.scenario)
    cfg = effective_config(args)
    common = {"base_config": cfg, "base_seed": cfg.seed}
    if args.repeats is not None:
        common["repeats"] = args.repeats
    if args.axis:
        axes = experiments.AXES if args.axis == "all" else (
            {"pop": "pop_size", "gen": "generations", "cooling": "cooling_alpha"}[args.axis],
        )
        spec = experiments.SweepSpec.reduced_axes(fixed=args.fixed, axes=axes, **common)
    elif args.grid == "full":
        spec = experiments.SweepSpec.full(**common)
    else:
        spec = experiments.SweepSpec.reduced(**common)
    if args.pop_values or args.gen_values or args.cooling_values:
        spec = replace(
            spec,
            pop_sizes=args.pop_values or spec.pop_sizes,
            generations=args.gen_values or spec.generations,
            cooling=args.cooling_values or spec.cooling,
        )
    started = time.perf_counter()
    result = experiments.sweep(spec, scenario, n_jobs=args.jobs)
    experiments.write_sweep(result, spec, args.out_dir, scenario.label)
    ok = sum(r["status"] == "ok" for r in result.runs)
    for axis, rho in result.spearman.items():
        print(f"spearman({axis}, mean objective) = {rho:.4f}")
    print(f"{len(result.cells)} cells, {ok}/{len(result.runs)} runs ok, {time.perf_counter() - started:.1f}s -> {args.out_dir}")
    return EXIT_OK if ok else EXIT_IO


def cmd_stability(args) -> int:
    scenario = read_scenario(args.scenario)
    cfg = effective_config(args)
    result = experiments.stability_study(scenario, cfg, args.runs, n_jobs=args.jobs)
    experiments.write_stability(result, cfg, args.out_dir, scenario.label)
    for s, obj in zip(result.seeds, result.final_objective):
        print(f"seed {s:>4}  final objective {obj:.6f}")
    print(f"mean {result.mean_objective:.6f}  std {result.std_objective:.6f}  CoV {result.cov_objective:.4f} -> {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgcoalition", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scenario")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--capacity", type=_pair, metavar="LO,HI")
    p.add_argument("--market", choices=["deficit", "surplus"], default="deficit")
    p.add_argument("--market-share", dest="market_share", type=_pair, metavar="LO,HI")
    p.add_argument("--price", type=_pair, metavar="LO,HI")
    p.add_argument("--delta", type=float)
    p.add_argument("--maintenance", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="build a scenario from 15-minute prosumer data")
    p.add_argument("--input", required=True)
    p.add_argument("--mapping", help="JSON column mapping")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--hour", required=True, help="ISO timestamp of the trading hour")
    p.add_argument("--market-quantity", dest="market_quantity", type=float)
    p.add_argument("--price", type=float)
    p.add_argument("--battery-capacity", dest="battery_capacity", type=float, default=BatteryDefaults.capacity)
    p.add_argument("--initial-fraction", dest="initial_fraction", type=float, default=BatteryDefaults.initial_stored_fraction)
    p.add_argument("--delta", type=float, default=CostModel.delta_coeff)
    p.add_argument("--maintenance", type=float, default=CostModel.maintenance_cost)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="run the memetic algorithm on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="compare memetic runs with the exhaustive oracle")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seeds", type=_positive_int, default=20, help="number of seeds, starting at --seed")
    p.add_argument("--limit", type=int, default=ORACLE_LIMIT)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("shapley", help="Shapley allocation for a set of members")
    p.add_argument("--scenario", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--members", help="comma-separated member ids")
    g.add_argument("--run-dir", dest="run_dir", help="use the coalition of a previous run")
    p.add_argument("--method", choices=["auto", "exact", "sampled"], default="auto")
    p.add_argument("--permutations", type=_positive_int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shapley)

    p = sub.add_parser("sweep", help="parameter sweep")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--grid", choices=["reduced", "full"], default="reduced")
    p.add_argument("--axis", choices=["all", "pop", "gen", "cooling"])
    p.add_argument("--fixed", type=_parse_fixed, default=dict(experiments.AXIS_FIXED), help="e.g. pop=100,gen=100,cooling=0.5")
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--pop-values", dest="pop_values", type=_int_list)
    p.add_argument("--gen-values", dest="gen_values", type=_int_list)
    p.add_argument("--cooling-values", dest="cooling_values", type=_float_list)
    p.add_argument("--jobs", type=_positive_int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stability", help="repeat runs from distinct seeds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--jobs", type=_positive_int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "runs", 5) < 2:
        parser.error("--runs must be >= 2")
    try:
        return args.func(args)
    except OracleSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
