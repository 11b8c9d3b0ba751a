import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcoalition.model import MarketState
from mgcoalition.shapley import (
    MicrogridGame,
    TableGame,
    allocate,
    allocation_report,
    exact_shapley,
    sampled_shapley,
    shapley_exact,
    shapley_sampled,
)
from mgcoalition.valuation import CostModel, characteristic_value

from conftest import make_mg


def brute_force_shapley(values, n):
    """Average marginal contributions over every join order, by hand."""
    phi = [0.0] * n
    for order in itertools.permutations(range(n)):
        mask = 0
        for i in order:
            phi[i] += values[mask | (1 << i)] - values[mask]
            mask |= 1 << i
    return [p / math.factorial(n) for p in phi]


TWO_PLAYER = [0.0, 1.0, 2.0, 4.0]


def test_two_player_hand_enumeration():
    alloc = shapley_exact(TableGame(TWO_PLAYER))
    assert alloc["0"] == pytest.approx(1.5)
    assert alloc["1"] == pytest.approx(2.5)
    assert alloc.game_total == 4.0


@pytest.mark.parametrize("seed", [0, 1, 2, 12345])
def test_two_player_sampled_within_five_percent(seed):
    alloc = shapley_sampled(TableGame(TWO_PLAYER), 10_000, seed)
    assert alloc["0"] == pytest.approx(1.5, rel=0.05)
    assert alloc["1"] == pytest.approx(2.5, rel=0.05)


def _members(spec):
    return [make_mg(f"m{i}", s, cycles_used=c) for i, (s, c) in enumerate(spec)]


def test_symmetric_members_get_equal_share():
    members = _members([(5.0, 100), (5.0, 100), (3.0, 40)])
    alloc = exact_shapley(members, MarketState(-9.0, 0.3), CostModel())
    assert alloc["m0"] == pytest.approx(alloc["m1"], abs=1e-12)


def test_dummy_member_gets_zero():
    members = _members([(5.0, 100), (0.0, 0), (3.0, 40)])
    alloc = exact_shapley(members, MarketState(-6.0, 0.3), CostModel(0.0002, 0.0))
    assert abs(alloc["m1"]) <= 1e-12


def test_exact_matches_brute_force_on_microgrid_game():
    members = _members([(5.0, 100), (2.5, 3000), (7.0, 10), (1.0, 0)])
    market, cm = MarketState(-9.0, 0.3), CostModel(0.0002, 0.5)
    values = [
        characteristic_value([m for i, m in enumerate(members) if mask >> i & 1], market, cm).value
        for mask in range(16)
    ]
    expected = brute_force_shapley(values, 4)
    alloc = exact_shapley(members, market, cm)
    assert [alloc[m.id] for m in members] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 6])
def test_exhaustive_sampling_equals_exact(n):
    rng = np.random.default_rng(n)
    members = _members([(float(rng.uniform(0, 15)), int(rng.integers(0, 6000))) for _ in range(n)])
    market, cm = MarketState(-20.0, 0.3), CostModel()
    exact = exact_shapley(members, market, cm)
    full = sampled_shapley(members, market, cm, 1, 0, exhaustive=True)
    assert full.n_permutations == math.factorial(n)
    for m in members:
        assert full[m.id] == pytest.approx(exact[m.id], abs=1e-9)


def test_sampled_is_deterministic_in_seed():
    members = _members([(5.0, 100), (2.5, 3000), (7.0, 10)])
    market, cm = MarketState(-9.0, 0.3), CostModel()
    a = sampled_shapley(members, market, cm, 5000, 7)
    b = sampled_shapley(members, market, cm, 5000, 7)
    assert a == b
    assert a.method == "sampled" and a.seed == 7 and a.n_permutations == 5000


def test_sampled_rejects_zero_permutations():
    with pytest.raises(ValueError):
        sampled_shapley(_members([(1.0, 0)]), MarketState(-1.0, 1.0), CostModel(), 0, 0)


def test_exact_limit_enforced_and_allocate_falls_back():
    members = _members([(1.0, i) for i in range(5)])
    market, cm = MarketState(-3.0, 1.0), CostModel()
    with pytest.raises(ValueError):
        exact_shapley(members, market, cm, exact_limit=4)
    alloc = allocate(members, market, cm, exact_limit=4, n_permutations=200, seed=3)
    assert alloc.method == "sampled"
    assert allocate(members, market, cm).method == "exact"


def test_allocation_report_rows():
    market, cm = MarketState(-9.0, 0.3), CostModel()
    single = _members([(4.0, 10)])
    alloc = exact_shapley(single, market, cm)
    rows = allocation_report(alloc, single, market, cm)
    assert len(rows) == 1 and rows[0]["shapley_value"] == pytest.approx(alloc.game_total)
    assert allocation_report(exact_shapley([], market, cm), [], market, cm) == []

    three = _members([(5.0, 100), (2.5, 3000), (7.0, 10)])
    alloc = exact_shapley(three, market, cm)
    rows = allocation_report(alloc, three, market, cm)
    assert [r["shapley_value"] for r in rows] == [alloc[m.id] for m in three]
    assert [r["energy_contribution_kwh"] for r in rows] == [5.0, 2.5, 7.0]
    assert rows[1]["degradation_cost"] == pytest.approx(0.6)


def test_allocation_report_requires_coverage():
    market, cm = MarketState(-9.0, 0.3), CostModel()
    members = _members([(5.0, 100), (2.5, 3000)])
    alloc = exact_shapley(members[:1], market, cm)
    with pytest.raises(ValueError):
        allocation_report(alloc, members, market, cm)


table_st = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(-10, 10), min_size=2**n - 1, max_size=2**n - 1).map(lambda v: [0.0] + v)
)


@settings(max_examples=60)
@given(table_st)
def test_exact_matches_brute_force_on_any_game(values):
    n = int(math.log2(len(values)))
    alloc = shapley_exact(TableGame(values))
    assert [alloc[str(i)] for i in range(n)] == pytest.approx(brute_force_shapley(values, n), abs=1e-9)
    assert alloc.total() == pytest.approx(values[-1], abs=1e-9)


@settings(max_examples=40)
@given(table_st, st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_sampled_is_efficient_for_any_sample(values, n_perm, seed):
    alloc = shapley_sampled(TableGame(values), n_perm, seed)
    assert alloc.total() == pytest.approx(values[-1], abs=1e-9)


@settings(max_examples=40)
@given(table_st, table_st)
def test_linearity(a, b):
    if len(a) != len(b):
        return
    n = int(math.log2(len(a)))
    pa, pb = shapley_exact(TableGame(a)), shapley_exact(TableGame(b))
    ps = shapley_exact(TableGame([x + y for x, y in zip(a, b)]))
    for i in map(str, range(n)):
        assert ps[i] == pytest.approx(pa[i] + pb[i], abs=1e-9)


@settings(max_examples=30)
@given(
    st.lists(st.tuples(st.floats(0, 15), st.integers(0, 6000)), min_size=1, max_size=6),
    st.floats(0.1, 10.0),
)
def test_joint_price_and_cost_scaling_scales_allocation(spec, k):
    members = _members(spec)
    market, cm = MarketState(-12.0, 0.3), CostModel(0.0002, 0.5)
    base = exact_shapley(members, market, cm)
    scaled = exact_shapley(members, MarketState(-12.0, 0.3 * k), cm.scaled(k))
    for m in members:
        assert scaled[m.id] == pytest.approx(k * base[m.id], rel=1e-9, abs=1e-9)


def test_microgrid_table_matches_prefix_values():
    members = _members([(5.0, 100), (2.5, 3000), (7.0, 10)])
    game = MicrogridGame(members, MarketState(4.0, 0.3), CostModel())
    perms = np.array(list(itertools.permutations(range(3))))
    pv = game.prefix_values(perms)
    table = game.table()
    for row, order in zip(pv, perms):
        mask = 0
        assert row[0] == table[0]
        for k, i in enumerate(order, start=1):
            mask |= 1 << i
            assert row[k] == pytest.approx(table[mask], abs=1e-12)
