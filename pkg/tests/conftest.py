import pytest

from mgcoalition.model import BatteryState, Community, MarketState, Microgrid
from mgcoalition.scenario import Scenario
from mgcoalition.valuation import CostModel

_ACCEPTANCE_LINES: list[str] = []


def make_mg(id, stored, capacity=15.0, cycles_used=0, remaining=6000, eta_c=0.95, eta_d=0.95, delta=0.0):
    battery = BatteryState(
        stored_energy=stored,
        remaining_cycles=remaining,
        capacity=capacity,
        cycles_used=cycles_used,
        charge_efficiency=eta_c,
        discharge_efficiency=eta_d,
    )
    return Microgrid(id, battery, delta)


def make_scenario(stored, quantity, price=1.0, delta_coeff=0.0002, maintenance=0.0, capacity=15.0, cycles=None):
    cycles = cycles or [0] * len(stored)
    mgs = [
        make_mg(f"M{i}", s, capacity=capacity, cycles_used=c)
        for i, (s, c) in enumerate(zip(stored, cycles))
    ]
    return Scenario(Community(tuple(mgs)), MarketState(quantity, price), CostModel(delta_coeff, maintenance))


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
