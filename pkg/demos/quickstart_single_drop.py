"""Quickstart: one random network drop, solved end to end.

Generates the default two-tier scenario (one macro cell, four small cells,
20 two-antenna users on 8 shared sub-channels), runs the joint user
association / sub-channel / antenna-selection / power-control alternation,
and prints the allocation report.
"""

import numpy as np

from hetnet_jpcs import (Scenario, SolverConfig, generate_instance, run_jpcs,
                         watts_to_dbm)
from hetnet_jpcs.model import active_tuples

scenario = Scenario(seed=7)
instance = generate_instance(scenario)
config = SolverConfig(seed=7)

report = run_jpcs(instance, config)

print(f"sum rate: {report.sum_rate:.2f} bps/Hz "
      f"({report.outer_iterations} outer iterations, "
      f"converged={report.converged})")
print("sum-rate trace:", np.round(report.sumrate_trace, 2))
print("flags:", report.flags)

print("\nper-user allocation (user -> cell, sub-channel, antenna, power, rate):")
for (i, b, m, a) in active_tuples(report.assignment):
    pw = report.power.p[i, b, m, a]
    dbm = f"{watts_to_dbm(pw):6.1f} dBm" if pw > 0 else "    off   "
    print(f"  user {i:2d} -> cell {b}, ch {m}, ant {a}, "
          f"{dbm}, {report.per_user_rate[i]:5.2f} bps/Hz")

idle = [i for i in range(instance.num_users)
        if report.assignment.s[i].sum() == 0]
if idle:
    print("idle users:", idle)
if report.qos_residual:
    print("below the minimum rate (reported residuals):",
          {u: round(r, 2) for u, r in report.qos_residual.items()})
