import pytest
from hypothesis import given, strategies as st

from mgcoalition.model import (
    BatteryState,
    BatteryStatus,
    Community,
    MarketState,
    MarketStatus,
    ValidationError,
    battery_status,
    buy_capacity,
    relevant_capacity,
    sell_capacity,
    update_stored_energy,
)

from conftest import make_mg


@pytest.mark.parametrize(
    "stored, expected",
    [
        (15.0, BatteryStatus.FULLY_CHARGED),
        (0.0, BatteryStatus.DISCHARGED),
        (7.5, BatteryStatus.PARTIALLY_CHARGED),
    ],
)
def test_battery_status(stored, expected):
    assert battery_status(BatteryState(stored, 100, 15.0)) is expected


@pytest.mark.parametrize(
    "stored, capacity, eta_c, eta_d, delta, expected",
    [
        (5.0, 15.0, 0.95, 0.95, 2.0, 6.9),
        (5.0, 15.0, 0.95, 0.9, -1.8, 3.0),
        (14.5, 15.0, 1.0, 0.95, 2.0, 15.0),
        (1.0, 15.0, 0.95, 0.5, -3.0, 0.0),
    ],
)
def test_update_stored_energy(stored, capacity, eta_c, eta_d, delta, expected):
    b = BatteryState(stored, 10, capacity, 0, eta_c, eta_d)
    after = update_stored_energy(b, delta)
    assert after.stored_energy == pytest.approx(expected, abs=1e-12)
    assert after.cycles_used == 1
    assert after.remaining_cycles == 9


def test_update_without_change_keeps_cycles():
    b = BatteryState(15.0, 10, 15.0)
    assert update_stored_energy(b, 3.0) == b
    assert update_stored_energy(b, 0.0) == b


def test_remaining_cycles_floor_at_zero():
    after = update_stored_energy(BatteryState(5.0, 0, 15.0), 1.0)
    assert after.remaining_cycles == 0
    assert after.cycles_used == 1


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(stored_energy=16.0, remaining_cycles=1, capacity=15.0),
        dict(stored_energy=-0.1, remaining_cycles=1, capacity=15.0),
        dict(stored_energy=1.0, remaining_cycles=-1, capacity=15.0),
        dict(stored_energy=0.0, remaining_cycles=1, capacity=0.0),
        dict(stored_energy=1.0, remaining_cycles=1, capacity=15.0, charge_efficiency=0.0),
        dict(stored_energy=1.0, remaining_cycles=1, capacity=15.0, discharge_efficiency=1.2),
    ],
)
def test_battery_rejects_invalid(kwargs):
    with pytest.raises(ValidationError):
        BatteryState(**kwargs)


def test_capacity_sums():
    assert sell_capacity([]) == 0.0
    assert sell_capacity([make_mg("a", 4.0), make_mg("b", 6.0)]) == 10.0
    assert sell_capacity([make_mg("a", 3.2)]) == 3.2
    assert buy_capacity([]) == 0.0
    assert buy_capacity([make_mg("a", 10.0, 15.0), make_mg("b", 12.0, 12.0)]) == 5.0
    assert buy_capacity([make_mg("a", 15.0), make_mg("b", 15.0)]) == 0.0


def test_market_state():
    assert MarketState(-5.0, 0.3).status is MarketStatus.DEFICIT
    assert MarketState(5.0, 0.3).status is MarketStatus.SURPLUS
    assert MarketState(-5.0, 0.3).magnitude == 5.0
    with pytest.raises(ValidationError):
        MarketState(0.0, 0.3)
    with pytest.raises(ValidationError):
        MarketState(-1.0, -0.3)


def test_relevant_capacity_follows_market():
    mgs = [make_mg("a", 4.0, 10.0), make_mg("b", 6.0, 10.0)]
    assert relevant_capacity(mgs, MarketState(-1.0, 1.0)) == 10.0
    assert relevant_capacity(mgs, MarketState(1.0, 1.0)) == 10.0
    assert relevant_capacity(mgs[:1], MarketState(1.0, 1.0)) == 6.0


def test_community_validation():
    with pytest.raises(ValidationError):
        Community(())
    with pytest.raises(ValidationError):
        Community((make_mg("a", 1.0), make_mg("a", 2.0)))
    c = Community((make_mg("a", 1.0), make_mg("b", 2.0)))
    assert c.n == 2 and c.ids == ["a", "b"] and c[1].id == "b"


battery_st = st.builds(
    lambda cap, frac, eta_c, eta_d: BatteryState(cap * frac, 100, cap, 0, eta_c, eta_d),
    st.floats(1.0, 20.0),
    st.floats(0.0, 1.0),
    st.floats(0.5, 1.0),
    st.floats(0.5, 1.0),
)


@given(battery_st, st.floats(-30.0, 30.0))
def test_update_stays_in_bounds_and_is_monotone(b, delta):
    after = update_stored_energy(b, delta)
    assert 0.0 <= after.stored_energy <= b.capacity
    if delta > 0:
        assert after.stored_energy >= b.stored_energy
    elif delta < 0:
        assert after.stored_energy <= b.stored_energy


@given(st.lists(battery_st, min_size=0, max_size=8))
def test_sell_plus_buy_is_total_capacity(batteries):
    mgs = [make_mg(str(i), b.stored_energy, b.capacity) for i, b in enumerate(batteries)]
    total = sum(b.capacity for b in batteries)
    assert sell_capacity(mgs) + buy_capacity(mgs) == pytest.approx(total, abs=1e-9)
    assert sell_capacity(mgs) >= 0 and buy_capacity(mgs) >= 0
