"""Optimal microgrid coalitions for energy-market balancing.

A memetic algorithm (genetic search with simulated-annealing refinement)
picks the coalition of battery-equipped microgrids that best absorbs a
market surplus or covers a deficit; the coalition's value is shared among
members by the Shapley value.
"""

from .model import (
    BatteryState,
    BatteryStatus,
    Community,
    MarketState,
    MarketStatus,
    Microgrid,
    ValidationError,
    battery_status,
    buy_capacity,
    sell_capacity,
    update_stored_energy,
)
from .optimizer import OptimizerConfig, RunResult, run
from .oracle import OracleResult, solve_exhaustive
from .scenario import Scenario, generate_synthetic, read_scenario, write_scenario
from .shapley import Allocation, exact_shapley, sampled_shapley
from .valuation import CoalitionValue, CostModel, characteristic_value

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "BatteryState",
    "BatteryStatus",
    "CoalitionValue",
    "Community",
    "CostModel",
    "MarketState",
    "MarketStatus",
    "Microgrid",
    "OptimizerConfig",
    "OracleResult",
    "RunResult",
    "Scenario",
    "ValidationError",
    "battery_status",
    "buy_capacity",
    "characteristic_value",
    "exact_shapley",
    "generate_synthetic",
    "read_scenario",
    "run",
    "sampled_shapley",
    "sell_capacity",
    "solve_exhaustive",
    "update_stored_energy",
    "write_scenario",
]
