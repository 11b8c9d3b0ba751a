import itertools

import pytest

from mgcoalition.model import Community
from mgcoalition.oracle import OracleSizeError, coalition_objective, solve_exhaustive
from mgcoalition.scenario import Scenario, generate_synthetic

from conftest import make_scenario

# no cycles used, so degradation is zero as well
ZERO_COST = dict(maintenance=0.0)


def hand_scenario():
    # members M0, M1, M2 hold 4, 6 and 10 kWh; market wants 10 at price 1
    return make_scenario([4.0, 6.0, 10.0], -10.0, price=1.0, **ZERO_COST)


def test_single_member_matching_market():
    sc = make_scenario([5.0], -5.0, price=0.4, maintenance=0.1)
    res = solve_exhaustive(sc)
    assert res.best_coalition == ["M0"]
    assert res.n_evaluated == 2


def test_hand_enumeration_of_three_members():
    # objective = min(S, 10) - 0.5 * (10 - min(S, 10)), S = stored of the subset
    expected = {
        (): -5.0,
        ("M0",): 4.0 - 3.0,
        ("M1",): 6.0 - 2.0,
        ("M2",): 10.0,
        ("M0", "M1"): 10.0,
        ("M0", "M2"): 10.0,
        ("M1", "M2"): 10.0,
        ("M0", "M1", "M2"): 10.0,
    }
    sc = hand_scenario()
    for subset, value in expected.items():
        assert coalition_objective(sc, subset, 0.5) == pytest.approx(value)
    res = solve_exhaustive(sc, rho=0.5)
    assert res.best_objective == pytest.approx(10.0)
    # five subsets tie at 10; the single 10 kWh member is the smallest
    assert res.best_coalition == ["M2"]
    assert [c for c, _ in res.top[:2]] == [["M2"], ["M0", "M1"]]


def test_rho_zero_prefers_cheapest_saturating_subset():
    sc = make_scenario([4.0, 6.0, 10.0], -10.0, price=1.0, delta_coeff=0.01, cycles=[0, 0, 50])
    res = solve_exhaustive(sc, rho=0.0)
    # {M2} pays 0.5 degradation, {M0, M1} pays nothing
    assert res.best_coalition == ["M0", "M1"]
    assert res.best_objective == pytest.approx(10.0)


def test_result_independent_of_member_order():
    sc = generate_synthetic(9, 4)
    base = solve_exhaustive(sc)
    for perm in list(itertools.permutations(range(9)))[::40000][:5]:
        shuffled = Scenario(Community(tuple(sc.community[i] for i in perm)), sc.market, sc.cost_model)
        res = solve_exhaustive(shuffled)
        assert res.best_coalition == base.best_coalition
        assert res.best_objective == base.best_objective


def test_oracle_matches_direct_enumeration():
    sc = generate_synthetic(8, 11)
    best = max(
        coalition_objective(sc, [m.id for m, f in zip(sc.community, mask) if f], 0.5)
        for mask in itertools.product((0, 1), repeat=8)
    )
    assert solve_exhaustive(sc).best_objective == pytest.approx(best, abs=1e-12)


def test_size_limit():
    with pytest.raises(OracleSizeError):
        solve_exhaustive(generate_synthetic(23, 0))
    with pytest.raises(OracleSizeError):
        solve_exhaustive(generate_synthetic(6, 0), limit_n=5)


def test_unknown_member():
    with pytest.raises(ValueError):
        coalition_objective(hand_scenario(), ["nope"], 0.5)
