"""Average sum rate versus the cross-tier interference cap.

Desk-scale version of the main comparison: the joint allocator with 3 and 2
antennas, the bulk (per-user) antenna-selection variant, equal power
allocation, and the single-antenna restriction, swept over the macro
protection cap.  Writes a CSV and prints the aggregated table.
"""

import csv
import os
import tempfile

from hetnet_jpcs.chansim import Scenario
from hetnet_jpcs.harness import HarnessConfig, cmd_sweep_ith

hc = HarnessConfig(
    scenario=Scenario(users_total=6, num_smallcells=2, num_subchannels=3,
                      macro_radius_m=400.0),
    drops=12,
    seed=1,
    ith_sweep_dbm=(-105.0, -95.0, -85.0),
)

out = os.path.join(tempfile.gettempdir(), "ith_sweep.csv")
code = cmd_sweep_ith(hc, out)
print(f"exit code {code}, wrote {out}\n")

with open(out, newline="") as fh:
    rows = list(csv.reader(fh))
print(f"{'cap (dBm)':>10} {'scheme':>10} {'mean rate':>10} {'ci95':>8}")
for ith, scheme, mean, ci in rows[1:]:
    print(f"{float(ith):10.0f} {scheme:>10} {float(mean):10.2f} {float(ci):8.2f}")

print("\nExpected shape: every scheme improves as the cap loosens;"
      "\nper-sub-channel selection beats bulk selection beats one antenna,"
      "\nand the optimized powers beat equal power allocation.")
