"""Exhaustive ground truth for small communities.

Every one of the ``2**n`` coalitions (empty included) is scored with the
un-normalised objective ``v(C) - penalty(C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optimizer import CoalitionProblem
from .scenario import Scenario

ORACLE_LIMIT = 22


class OracleSizeError(ValueError):
    """Community too large for exhaustive enumeration."""


@dataclass(frozen=True)
class OracleResult:
    best_coalition: list[str]
    best_objective: float
    top: list[tuple[list[str], float]]
    n_evaluated: int


def _enumerate(problem: CoalitionProblem):
    cap = np.zeros(1)
    deg = np.zeros(1)
    size = np.zeros(1, dtype=np.int64)
    for i in range(problem.n):
        cap = np.concatenate([cap, cap + problem.capacity[i]])
        deg = np.concatenate([deg, deg + problem.degradation[i]])
        size = np.concatenate([size, size + 1])
    return problem.value_from_sums(cap, deg, size) - problem.penalty_from_sums(cap), size


def coalition_objective(scenario: Scenario, member_ids, rho: float) -> float:
    """Objective of one coalition, scored by the same arithmetic as the oracle."""
    problem = CoalitionProblem(scenario.community, scenario.market, scenario.cost_model, rho)
    wanted = set(member_ids)
    unknown = wanted - set(scenario.community.ids)
    if unknown:
        raise ValueError(f"unknown member ids {sorted(unknown)}")
    flags = np.array([m.id in wanted for m in scenario.community])
    raw, pen = problem.evaluate_raw(flags)
    return float(raw[0] - pen[0])


def solve_exhaustive(
    scenario: Scenario, rho: float = 0.5, limit_n: int = ORACLE_LIMIT, top_k: int = 5
) -> OracleResult:
    """Best coalition by brute force.

    Ties on the objective go to the smaller coalition, then to the
    lexicographically smallest sorted tuple of member ids, so the result does
    not depend on member order in the scenario.
    """
    n = scenario.n
    if n > limit_n:
        raise OracleSizeError(f"oracle limited to {limit_n} microgrids, scenario has {n}")
    problem = CoalitionProblem(scenario.community, scenario.market, scenario.cost_model, rho)
    objective, size = _enumerate(problem)
    ids = scenario.community.ids

    def members(mask: int) -> list[str]:
        return sorted(ids[i] for i in range(n) if mask >> i & 1)

    best = float(objective.max())
    tied = np.flatnonzero(objective == best)
    best_mask = min(tied, key=lambda m: (int(size[m]), members(int(m))))

    top_k = min(top_k, len(objective))
    candidates = np.argsort(-objective, kind="stable")[: max(top_k * 4, top_k)]
    ranked = sorted(
        candidates, key=lambda m: (-objective[m], int(size[m]), members(int(m)))
    )[:top_k]
    return OracleResult(
        best_coalition=members(int(best_mask)),
        best_objective=best,
        top=[(members(int(m)), float(objective[m])) for m in ranked],
        n_evaluated=len(objective),
    )
