"""Binariness of the relaxed schedule versus the penalty weight.

The binary scheduling variables are relaxed to [0, 1] and the conditions
z - z^2 <= 0 are priced into the objective.  Below a threshold weight the
relaxed solution stays fractional; above it the entries lock to {0, 1} and
the achieved sum rate stops changing.  The sweep reproduces that saturation.
"""

import csv
import os
import tempfile

from hetnet_jpcs.chansim import Scenario
from hetnet_jpcs.harness import HarnessConfig, cmd_sweep_penalty

hc = HarnessConfig(
    scenario=Scenario(users_total=6, num_smallcells=2, num_subchannels=3,
                      macro_radius_m=400.0),
    drops=8,
    seed=2,
    mu_factors=(0.0, 0.01, 0.1, 1.0, 10.0, 100.0),
)

out = os.path.join(tempfile.gettempdir(), "penalty_sweep.csv")
code = cmd_sweep_penalty(hc, out)
print(f"exit code {code}, wrote {out}\n")

with open(out, newline="") as fh:
    rows = list(csv.reader(fh))
print(f"{'weight factor':>14} {'mean rate':>10} {'max binariness gap':>20}")
for mu, mean, gap in rows[1:]:
    print(f"{float(mu):14.2f} {float(mean):10.2f} {float(gap):20.2e}")

print("\nThe weight factor scales the largest rate coefficient; beyond the"
      "\nthreshold the gap collapses and the mean rate is flat.")
