"""Memetic search for the best trading coalition.

A steady-state genetic algorithm over activation-flag vectors (rank
selection, two-point crossover, market-aware one-point mutation) whose
elite subpopulation is refined each generation by simulated annealing.

Populations are ``(pop_size, n)`` boolean arrays; an individual is one row.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import Community, MarketState, MarketStatus, ValidationError
from .scenario import Scenario
from .shapley import EXACT_LIMIT, Allocation, allocate
from .valuation import CoalitionValue, CostModel, characteristic_value, degradation_cost, traded_energy

SIGMA_FLOOR = 1e-12
ENERGY_TOL = 1e-9


@dataclass(frozen=True)
class OptimizerConfig:
    """Memetic algorithm settings.

    Attributes:
        pop_size: Individuals per generation.
        generations: Number of generations.
        init_active_pct: Chance, in percent, that a flag starts active.
        selection_pressure: In (0, 1]; rank weights are raised to ``1/pressure``.
        penalty_rho: Penalty per kWh of mismatch between coalition and market.
        elite_pct: Share of the population refined by annealing, in percent.
        t_initial: Starting annealing temperature.
        t_min: Annealing stops once the temperature is at or below this.
        cooling_alpha: Multiplicative cooling factor, in (0, 1).
        neighbour_bias: Chance that an annealing move follows the market
            (activate while under-covered, deactivate otherwise).
        seed: Seed of the run's random generator.
        exact_limit: Largest coalition given an exact Shapley allocation.
        shapley_permutations: Join orders sampled above ``exact_limit``.
    """

    pop_size: int = 50
    generations: int = 150
    init_active_pct: float = 10.0
    selection_pressure: float = 1.0
    penalty_rho: float = 0.5
    elite_pct: float = 20.0
    t_initial: float = 1.0
    t_min: float = 0.01
    cooling_alpha: float = 0.8
    neighbour_bias: float = 0.8
    seed: int = 0
    exact_limit: int = EXACT_LIMIT
    shapley_permutations: int = 20_000

    def __post_init__(self) -> None:
        if self.pop_size < 2:
            raise ValidationError("pop_size must be >= 2")
        if self.generations < 0:
            raise ValidationError("generations must be >= 0")
        if not 0.0 <= self.init_active_pct <= 100.0:
            raise ValidationError("init_active_pct must be within [0, 100]")
        if not 0.0 < self.selection_pressure <= 1.0:
            raise ValidationError("selection_pressure must be in (0, 1]")
        if self.penalty_rho < 0:
            raise ValidationError("penalty_rho must be >= 0")
        if not 0.0 <= self.elite_pct <= 100.0:
            raise ValidationError("elite_pct must be within [0, 100]")
        if not (self.t_initial > 0 and self.t_min > 0 and self.t_min < self.t_initial):
            raise ValidationError("need 0 < t_min < t_initial")
        if not 0.0 < self.cooling_alpha < 1.0:
            raise ValidationError("cooling_alpha must be in (0, 1)")
        if not 0.0 <= self.neighbour_bias <= 1.0:
            raise ValidationError("neighbour_bias must be within [0, 1]")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def elite_count(self) -> int:
        k = int(math.floor(self.elite_pct * self.pop_size / 100.0 + 0.5))
        return min(max(1, k), self.pop_size)


@dataclass(frozen=True)
class Individual:
    flags: tuple[int, ...]
    cached_fitness: float | None = None

    def active_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.flags) if f]


@dataclass(frozen=True)
class FitnessSnapshot:
    """Population evaluation with the normalisation it was computed under."""

    fitness: np.ndarray
    raw_value: np.ndarray
    penalty: np.ndarray
    mean: float
    std: float

    @property
    def objective(self) -> np.ndarray:
        """Un-normalised objective ``v - penalty``."""
        return self.raw_value - self.penalty


@dataclass(frozen=True)
class GenerationTrace:
    generation: int
    best_fitness: float
    mean_fitness: float
    diversity: float
    best_objective: float
    best_value: float


@dataclass
class RunResult:
    best_individual: Individual
    best_coalition: list[str]
    best_fitness: float
    best_objective: float
    characteristic: CoalitionValue
    allocation: Allocation
    trace: list[GenerationTrace]
    wall_time: float
    seed: int
    final_mean: float
    final_std: float
    config: OptimizerConfig = field(default_factory=OptimizerConfig)


class CoalitionProblem:
    """Precomputed per-member arrays for fast vectorised evaluation."""

    def __init__(self, community: Community, market: MarketState, cm: CostModel, rho: float = 0.5):
        self.community = community
        self.market = market
        self.cost_model = cm
        self.rho = rho
        self.n = community.n
        stored = np.array([m.battery.stored_energy for m in community])
        free = np.array([m.battery.free_capacity for m in community])
        self.deficit = market.status is MarketStatus.DEFICIT
        self.capacity = stored if self.deficit else free
        self.stored = stored
        self.free = free
        self.degradation = np.array([degradation_cost(m.battery, cm) for m in community])
        self.magnitude = market.magnitude

    def sums(self, flags: np.ndarray):
        f = np.atleast_2d(flags).astype(float)
        return f @ self.capacity, f @ self.degradation, f.sum(axis=1)

    def value_from_sums(self, cap_sum, deg_sum, size) -> np.ndarray:
        traded = np.minimum(cap_sum, self.magnitude)
        v = self.market.price * traded - deg_sum - self.cost_model.maintenance_cost
        return np.where(size > 0, v, 0.0)

    def penalty_from_sums(self, cap_sum) -> np.ndarray:
        e_c = np.minimum(cap_sum, self.magnitude)
        gap = np.abs(self.magnitude - e_c)
        return np.where(gap <= ENERGY_TOL, 0.0, self.rho * gap)

    def evaluate_raw(self, flags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cap, deg, size = self.sums(flags)
        return self.value_from_sums(cap, deg, size), self.penalty_from_sums(cap)

    def snapshot(self, population: np.ndarray) -> FitnessSnapshot:
        raw, pen = self.evaluate_raw(population)
        mu = float(raw.mean())
        sigma = float(raw.std())
        return FitnessSnapshot(self.normalise(raw, pen, mu, sigma), raw, pen, mu, sigma)

    @staticmethod
    def normalise(raw, pen, mu: float, sigma: float) -> np.ndarray:
        if sigma < SIGMA_FLOOR:
            return -np.asarray(pen, dtype=float)
        return (raw - mu) / sigma - pen

    def activation_probability(self, i: int) -> float:
        if self.deficit:
            p = (self.stored[i] - self.degradation[i]) / self.magnitude
        else:
            p = self.free[i] / self.magnitude
        return min(1.0, max(0.0, float(p)))


def init_population(community: Community, cfg: OptimizerConfig, rng: np.random.Generator) -> np.ndarray:
    draws = rng.random((cfg.pop_size, community.n))
    return draws < cfg.init_active_pct / 100.0


def coalition_energy(flags, community: Community, market: MarketState) -> float:
    """Energy the flagged coalition would actually trade with ``market``."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (community.n,):
        raise ValueError("flag vector length does not match community size")
    return traded_energy([m for m, f in zip(community, flags) if f], market)


def penalty(e_market: float, e_coalition: float, rho: float) -> float:
    if rho < 0:
        raise ValueError("rho must be >= 0")
    gap = abs(e_market - e_coalition)
    return 0.0 if gap <= ENERGY_TOL else rho * gap


def population_fitness(
    population, community: Community, market: MarketState, cm: CostModel, rho: float
) -> FitnessSnapshot:
    """Z-scored coalition values minus imbalance penalties for a population."""
    population = np.atleast_2d(np.asarray(population, dtype=bool))
    if population.shape[0] == 0:
        raise ValueError("population must be non-empty")
    return CoalitionProblem(community, market, cm, rho).snapshot(population)


def rank_order(fitness: np.ndarray) -> np.ndarray:
    """Indices sorted by fitness descending, ties by index ascending."""
    return np.lexsort((np.arange(len(fitness)), -np.asarray(fitness)))


def rank_weights(fitness: np.ndarray, pressure: float = 1.0) -> np.ndarray:
    """Selection probability of each individual (in original index order).

    Rank ``r`` (1 = best) gets weight ``(N - r + 1) ** (1 / pressure)``;
    individuals with equal fitness share the mean weight of their ranks.
    """
    fitness = np.asarray(fitness, dtype=float)
    n = len(fitness)
    order = rank_order(fitness)
    by_rank = (n - np.arange(n)).astype(float) ** (1.0 / pressure)
    weights = np.empty(n)
    weights[order] = by_rank
    sorted_fit = fitness[order]
    start = 0
    while start < n:
        end = start + 1
        while end < n and sorted_fit[end] == sorted_fit[start]:
            end += 1
        if end - start > 1:
            weights[order[start:end]] = by_rank[start:end].mean()
        start = end
    return weights / weights.sum()


def _draw_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def rank_select(population, fitness, pressure: float, rng: np.random.Generator) -> np.ndarray:
    population = np.asarray(population)
    return population[_draw_index(rank_weights(fitness, pressure), rng)].copy()


def two_point_crossover(p1, p2, rng: np.random.Generator, cuts: tuple[int, int] | None = None):
    """Swap the segment ``[a, b)`` between two parents.

    Cut points are distinct and drawn from ``1..len-1``; vectors shorter
    than three flags have no such pair and are returned unchanged.
    """
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p1.shape != p2.shape:
        raise ValueError("parents must have equal length")
    o1, o2 = p1.copy(), p2.copy()
    length = len(p1)
    if cuts is None:
        if length < 3:
            return o1, o2
        a, b = sorted(rng.choice(np.arange(1, length), size=2, replace=False))
    else:
        a, b = cuts
    if not 0 <= a < b <= length:
        raise ValueError(f"invalid cut points {(a, b)}")
    o1[a:b], o2[a:b] = p2[a:b], p1[a:b]
    return o1, o2


def mutation_probability(
    index: int, community: Community, market: MarketState, cm: CostModel
) -> float:
    """Activation probability of one member given the market state.

    Selling: ``(stored - degradation cost) / |quantity|``; buying:
    ``(capacity - stored) / quantity``; both clamped to ``[0, 1]``.
    """
    return CoalitionProblem(community, market, cm).activation_probability(index)


def _mutate(flags: np.ndarray, problem: CoalitionProblem, rng: np.random.Generator) -> np.ndarray:
    out = flags.copy()
    i = int(rng.integers(problem.n))
    out[i] = problem.activation_probability(i) > rng.random()
    return out


def mutate(indiv, community: Community, market: MarketState, cm: CostModel, rng: np.random.Generator):
    flags = np.asarray(indiv, dtype=bool)
    return _mutate(flags, CoalitionProblem(community, market, cm), rng)


def sa_acceptance_probability(delta_f: float, temperature: float) -> float:
    """Probability of moving to a neighbour whose fitness is worse by ``delta_f``.

    ``delta_f = fitness(current) - fitness(new)``, so improvements are <= 0.
    """
    if delta_f <= 0:
        return 1.0
    return math.exp(-delta_f / temperature)


def cooling_schedule(t0: float, t_min: float, alpha: float) -> list[float]:
    """Temperatures at which annealing steps are taken.

    The temperature is cooled before each step, and stepping continues
    while the pre-step temperature is above ``t_min``.
    """
    if not (0 < alpha < 1 and 0 < t_min < t0):
        raise ValueError("need 0 < alpha < 1 and 0 < t_min < t0")
    temps = []
    t = t0
    while t > t_min:
        t *= alpha
        temps.append(t)
    return temps


def _neighbours(
    flags: np.ndarray, problem: CoalitionProblem, rng: np.random.Generator, bias: float = 0.8
) -> np.ndarray:
    """Toggle one flag per row.

    With probability ``bias`` the toggle follows the market: activate a
    member with spare relevant capacity while the market is under-covered,
    deactivate one otherwise. The remaining moves go the other way. Rows
    with nothing to toggle in the chosen direction toggle any flag.
    """
    k, n = flags.shape
    cap = flags.astype(float) @ problem.capacity
    under = cap < problem.magnitude - ENERGY_TOL
    follow = rng.random(k) < bias
    activate = under == follow
    can_add = (~flags) & (problem.capacity > 0)[None, :]
    candidates = np.where(activate[:, None], can_add, flags)
    empty = ~candidates.any(axis=1)
    candidates[empty] = True
    keys = rng.random((k, n))
    choice = np.argmax(np.where(candidates, keys, -1.0), axis=1)
    out = flags.copy()
    out[np.arange(k), choice] = ~out[np.arange(k), choice]
    return out


def _anneal(
    flags: np.ndarray,
    problem: CoalitionProblem,
    mu: float,
    sigma: float,
    temperatures: list[float],
    rng: np.random.Generator,
    bias: float = 0.8,
) -> np.ndarray:
    current = np.atleast_2d(flags).copy()
    raw, pen = problem.evaluate_raw(current)
    fit = problem.normalise(raw, pen, mu, sigma)
    for t in temperatures:
        cand = _neighbours(current, problem, rng, bias)
        raw_c, pen_c = problem.evaluate_raw(cand)
        fit_c = problem.normalise(raw_c, pen_c, mu, sigma)
        delta = fit - fit_c
        with np.errstate(over="ignore"):
            p_accept = np.where(delta <= 0, 1.0, np.exp(-np.maximum(delta, 0.0) / t))
        accept = rng.random(len(current)) < p_accept
        current[accept] = cand[accept]
        fit = np.where(accept, fit_c, fit)
    return current


def sa_refine(
    indiv,
    community: Community,
    market: MarketState,
    cm: CostModel,
    rho: float,
    t0: float,
    t_min: float,
    alpha: float,
    rng: np.random.Generator,
    mean: float = 0.0,
    std: float = 1.0,
    bias: float = 0.8,
) -> np.ndarray:
    """Simulated-annealing refinement of one individual or a batch of them.

    Fitness is evaluated under the frozen normalisation ``(mean, std)``.
    Each row follows its own cooling chain from ``t0``.
    """
    flags = np.asarray(indiv, dtype=bool)
    problem = CoalitionProblem(community, market, cm, rho)
    out = _anneal(flags, problem, mean, std, cooling_schedule(t0, t_min, alpha), rng, bias)
    return out if flags.ndim == 2 else out[0]


def diversity(population) -> float:
    """Mean pairwise Hamming distance divided by vector length."""
    pop = np.atleast_2d(np.asarray(population, dtype=bool))
    m, n = pop.shape
    if m < 2 or n == 0:
        return 0.0
    ones = pop.sum(axis=0).astype(float)
    # per column, pairs that differ = ones * zeros
    differing = float((ones * (m - ones)).sum())
    return differing / (m * (m - 1) / 2) / n


def _replace_worst(population, fitness, offspring, off_fit):
    """Steady-state update: each child replaces the current worst if strictly fitter.

    Children already present in the population are discarded.
    """
    for child, f in zip(offspring, off_fit):
        if (population == child).all(axis=1).any():
            continue
        worst = int(rank_order(fitness)[-1])
        if f > fitness[worst]:
            population[worst] = child
            fitness[worst] = f


def run(scenario: Scenario, cfg: OptimizerConfig) -> RunResult:
    """Run the memetic algorithm on ``scenario``; deterministic in ``cfg.seed``."""
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    community = scenario.community
    problem = CoalitionProblem(community, scenario.market, scenario.cost_model, cfg.penalty_rho)
    temperatures = cooling_schedule(cfg.t_initial, cfg.t_min, cfg.cooling_alpha)
    k = cfg.elite_count

    population = init_population(community, cfg, rng)
    snap = problem.snapshot(population)
    trace: list[GenerationTrace] = []

    for gen in range(cfg.generations):
        fitness = snap.fitness.copy()
        incumbents = [
            population[int(np.argmax(snap.raw_value))].copy(),
            population[int(np.argmax(snap.objective))].copy(),
        ]
        incumbent_value = float(snap.raw_value.max())
        incumbent_objective = float(snap.objective.max())

        probs = rank_weights(fitness, cfg.selection_pressure)
        parent1 = population[_draw_index(probs, rng)]
        parent2 = population[_draw_index(probs, rng)]
        offspring = two_point_crossover(parent1, parent2, rng)
        offspring = [_mutate(child, problem, rng) for child in offspring]
        raw_o, pen_o = problem.evaluate_raw(np.array(offspring))
        off_fit = problem.normalise(raw_o, pen_o, snap.mean, snap.std)
        _replace_worst(population, fitness, offspring, off_fit)

        elite = rank_order(fitness)[:k]
        population[elite] = _anneal(
            population[elite], problem, snap.mean, snap.std, temperatures, rng, cfg.neighbour_bias
        )

        raw, pen = problem.evaluate_raw(population)
        frozen = problem.normalise(raw, pen, snap.mean, snap.std)
        restored: list[int] = []
        for indiv, lost in (
            (incumbents[0], raw.max() < incumbent_value),
            (incumbents[1], (raw - pen).max() < incumbent_objective),
        ):
            if lost:
                order = rank_order(frozen)
                worst = next(int(i) for i in order[::-1] if int(i) not in restored)
                population[worst] = indiv
                restored.append(worst)
                raw, pen = problem.evaluate_raw(population)
                frozen = problem.normalise(raw, pen, snap.mean, snap.std)

        snap = problem.snapshot(population)
        best = int(rank_order(snap.fitness)[0])
        trace.append(
            GenerationTrace(
                generation=gen,
                best_fitness=float(snap.fitness[best]),
                mean_fitness=float(snap.fitness.mean()),
                diversity=diversity(population),
                best_objective=float(snap.objective.max()),
                best_value=float(snap.raw_value.max()),
            )
        )

    best = int(rank_order(snap.fitness)[0])
    flags = population[best]
    members = [m for m, f in zip(community, flags) if f]
    characteristic = characteristic_value(members, scenario.market, scenario.cost_model)
    allocation = allocate(
        members,
        scenario.market,
        scenario.cost_model,
        exact_limit=cfg.exact_limit,
        n_permutations=cfg.shapley_permutations,
        seed=cfg.seed,
    )
    best_fitness = float(snap.fitness[best])
    return RunResult(
        best_individual=Individual(tuple(int(f) for f in flags), best_fitness),
        best_coalition=[m.id for m in members],
        best_fitness=best_fitness,
        best_objective=float(snap.objective[best]),
        characteristic=characteristic,
        allocation=allocation,
        trace=trace,
        wall_time=time.perf_counter() - started,
        seed=cfg.seed,
        final_mean=snap.mean,
        final_std=snap.std,
        config=cfg,
    )
