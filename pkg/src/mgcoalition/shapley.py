"""Shapley allocation of a coalition's value among its members.

Two estimators share one game abstraction: exact enumeration over the
``2**n`` value table, and Monte Carlo averaging over sampled join orders.
Players are indexed by position; bit ``i`` of a coalition mask is player ``i``.
"""

from __future__ import annotations

import abc
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import MarketState, MarketStatus, Microgrid
from .valuation import CostModel, degradation_cost

EXACT_LIMIT = 20
_PERMUTATION_BATCH = 4096


class CoalitionGame(abc.ABC):
    """A transferable-utility game over ``n`` indexed players."""

    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    @abc.abstractmethod
    def table(self) -> np.ndarray:
        """Returns v for every coalition mask in ``range(2**n)``."""

    @abc.abstractmethod
    def prefix_values(self, perms: np.ndarray) -> np.ndarray:
        """Returns v of each growing prefix of each join order.

        Args:
          perms: ``(P, n)`` integer array, each row a permutation of players.

        Returns:
          ``(P, n + 1)`` array whose column ``j`` is v of the first ``j`` players.
        """

    def grand_value(self) -> float:
        return float(self.prefix_values(np.arange(self.n)[None, :])[0, -1])


class TableGame(CoalitionGame):
    """Game given by an explicit value table indexed by coalition mask."""

    def __init__(self, values: Sequence[float], ids: Sequence[str] | None = None):
        values = np.asarray(values, dtype=float)
        n = int(round(math.log2(len(values))))
        if 2**n != len(values):
            raise ValueError("value table length must be a power of two")
        super().__init__(ids if ids is not None else [str(i) for i in range(n)])
        if len(self.ids) != n:
            raise ValueError("ids do not match table size")
        self._values = values

    def table(self) -> np.ndarray:
        return self._values

    def prefix_values(self, perms: np.ndarray) -> np.ndarray:
        bits = np.left_shift(np.int64(1), perms.astype(np.int64))
        masks = np.concatenate(
            [np.zeros((perms.shape[0], 1), dtype=np.int64), np.bitwise_or.accumulate(bits, axis=1)],
            axis=1,
        )
        return self._values[masks]


class MicrogridGame(CoalitionGame):
    """Characteristic-function game of a set of microgrids trading with one market.

    v(C) = price * min(capacity(C), |quantity|) - sum of degradation - maintenance,
    with v of the empty coalition fixed at 0.
    """

    def __init__(self, members: Sequence[Microgrid], market: MarketState, cm: CostModel):
        super().__init__([m.id for m in members])
        self.market = market
        self.cost_model = cm
        if market.status is MarketStatus.DEFICIT:
            cap = [m.battery.stored_energy for m in members]
        else:
            cap = [m.battery.free_capacity for m in members]
        self.capacity = np.asarray(cap, dtype=float)
        self.degradation = np.asarray(
            [degradation_cost(m.battery, cm) for m in members], dtype=float
        )

    def value_from_sums(self, cap_sum, deg_sum, size):
        """Vectorised characteristic function over aggregated member features."""
        cap_sum = np.asarray(cap_sum, dtype=float)
        traded = np.minimum(cap_sum, self.market.magnitude)
        v = self.market.price * traded - deg_sum - self.cost_model.maintenance_cost
        return np.where(np.asarray(size) > 0, v, 0.0)

    def table(self) -> np.ndarray:
        cap = np.zeros(1)
        deg = np.zeros(1)
        size = np.zeros(1, dtype=np.int64)
        for i in range(self.n):
            cap = np.concatenate([cap, cap + self.capacity[i]])
            deg = np.concatenate([deg, deg + self.degradation[i]])
            size = np.concatenate([size, size + 1])
        return self.value_from_sums(cap, deg, size)

    def prefix_values(self, perms: np.ndarray) -> np.ndarray:
        rows = perms.shape[0]
        zero = np.zeros((rows, 1))
        cap = np.concatenate([zero, np.cumsum(self.capacity[perms], axis=1)], axis=1)
        deg = np.concatenate([zero, np.cumsum(self.degradation[perms], axis=1)], axis=1)
        size = np.broadcast_to(np.arange(perms.shape[1] + 1), cap.shape)
        return self.value_from_sums(cap, deg, size)


@dataclass(frozen=True)
class Allocation:
    """Per-member share of a game's grand-coalition value.

    ``method`` is ``"exact"`` or ``"sampled"``; sampled allocations also
    carry the permutation count and seed they were drawn with.
    """

    values: dict[str, float]
    method: str
    game_total: float
    n_permutations: int | None = None
    seed: int | None = None
    ids: list[str] = field(default_factory=list)

    def __getitem__(self, member_id: str) -> float:
        return self.values[member_id]

    def total(self) -> float:
        return float(sum(self.values.values()))


def shapley_exact(game: CoalitionGame, exact_limit: int = EXACT_LIMIT) -> Allocation:
    n = game.n
    if n > exact_limit:
        raise ValueError(
            f"exact Shapley limited to {exact_limit} players, got {n}; use sampled mode"
        )
    if n == 0:
        return Allocation({}, "exact", 0.0, ids=[])
    t = np.asarray(game.table(), dtype=float)
    masks = np.arange(2**n, dtype=np.int64)
    size = np.zeros(1, dtype=np.int64)
    for _ in range(n):
        size = np.concatenate([size, size + 1])
    fact = [math.factorial(k) for k in range(n + 1)]
    weight = np.array([fact[s] * fact[n - s - 1] / fact[n] for s in range(n)])
    phi = {}
    for i in range(n):
        bit = np.int64(1) << i
        without = masks[(masks & bit) == 0]
        marginal = t[without | bit] - t[without]
        phi[game.ids[i]] = float(np.dot(weight[size[without]], marginal))
    return Allocation(phi, "exact", float(t[-1]), ids=list(game.ids))


def shapley_sampled(
    game: CoalitionGame,
    n_permutations: int,
    seed: int,
    exhaustive: bool = False,
) -> Allocation:
    """Average marginal contributions over random (or all) join orders.

    Each join order's marginals telescope to v(N) - v(empty), so the
    estimate is efficient for any sample. With ``exhaustive=True`` every one
    of the ``n!`` orders is used once and ``n_permutations``/``seed`` are
    ignored, which reproduces the exact value.
    """
    n = game.n
    if n == 0:
        return Allocation({}, "sampled", 0.0, 0, seed, ids=[])
    if exhaustive:
        perms_iter = [np.array(list(itertools.permutations(range(n))), dtype=np.int64)]
        total_perms = math.factorial(n)
    else:
        if n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        rng = np.random.default_rng(seed)
        base = np.arange(n, dtype=np.int64)
        batches = [
            min(_PERMUTATION_BATCH, n_permutations - start)
            for start in range(0, n_permutations, _PERMUTATION_BATCH)
        ]
        perms_iter = (rng.permuted(np.tile(base, (b, 1)), axis=1) for b in batches)
        total_perms = n_permutations

    sums = np.zeros(n)
    grand = 0.0
    for perms in perms_iter:
        pv = game.prefix_values(perms)
        marginals = np.diff(pv, axis=1)
        by_player = np.empty_like(marginals)
        np.put_along_axis(by_player, perms, marginals, axis=1)
        sums += by_player.sum(axis=0)
        grand = float(pv[0, -1])
    phi = {game.ids[i]: float(sums[i] / total_perms) for i in range(n)}
    return Allocation(
        phi,
        "sampled",
        grand,
        n_permutations=total_perms,
        seed=None if exhaustive else seed,
        ids=list(game.ids),
    )


def exact_shapley(
    members: Sequence[Microgrid],
    market: MarketState,
    cm: CostModel,
    exact_limit: int = EXACT_LIMIT,
) -> Allocation:
    """Exact Shapley allocation with ``members`` as the grand coalition."""
    return shapley_exact(MicrogridGame(members, market, cm), exact_limit)


def sampled_shapley(
    members: Sequence[Microgrid],
    market: MarketState,
    cm: CostModel,
    n_permutations: int,
    seed: int,
    exhaustive: bool = False,
) -> Allocation:
    return shapley_sampled(MicrogridGame(members, market, cm), n_permutations, seed, exhaustive)


def allocate(
    members: Sequence[Microgrid],
    market: MarketState,
    cm: CostModel,
    exact_limit: int = EXACT_LIMIT,
    n_permutations: int = 20_000,
    seed: int = 0,
) -> Allocation:
    """Exact allocation when small enough, permutation sampling otherwise."""
    if len(members) <= exact_limit:
        return exact_shapley(members, market, cm, exact_limit)
    return sampled_shapley(members, market, cm, n_permutations, seed)


def allocation_report(
    allocation: Allocation,
    members: Sequence[Microgrid],
    market: MarketState,
    cm: CostModel,
) -> list[dict]:
    """One row per member: energy it brings, its degradation cost, its share."""
    missing = [m.id for m in members if m.id not in allocation.values]
    if missing:
        raise ValueError(f"allocation does not cover members {missing}")
    rows = []
    for m in members:
        if market.status is MarketStatus.DEFICIT:
            energy = m.battery.stored_energy
        else:
            energy = m.battery.free_capacity
        rows.append(
            {
                "id": m.id,
                "energy_contribution_kwh": energy,
                "degradation_cost": degradation_cost(m.battery, cm),
                "shapley_value": allocation.values[m.id],
            }
        )
    return rows
