"""Uplink HetNet resource allocation.

Joint user association, sub-channel assignment and antenna selection via
penalty-based minorize-maximize, alternated with augmented-Lagrangian power
control, plus baselines, a brute-force oracle and a Monte-Carlo experiment
harness.
"""

from .chansim import Scenario, dbm_to_watts, generate_instance, path_loss_db, watts_to_dbm
from .jpcs import (AllocationReport, run_bulk_as, run_epa, run_jpcs,
                   run_single_antenna)
from .model import (Assignment, NetworkInstance, PowerAllocation, SolverConfig,
                    check_feasibility, interference, rate, restrict_antennas,
                    sum_rate)
from .oracle import enumerate_assignments, grid_power_search, oracle_optimum
from .powerctl import alm_power_control
from .scheduler import mm_schedule, rate_coefficients

__version__ = "0.1.0"

__all__ = [
    "AllocationReport", "Assignment", "NetworkInstance", "PowerAllocation",
    "Scenario", "SolverConfig", "alm_power_control", "check_feasibility",
    "dbm_to_watts", "enumerate_assignments", "generate_instance",
    "grid_power_search", "interference", "mm_schedule", "oracle_optimum",
    "path_loss_db", "rate", "rate_coefficients", "restrict_antennas",
    "run_bulk_as", "run_epa", "run_jpcs", "run_single_antenna", "sum_rate",
    "watts_to_dbm",
]
