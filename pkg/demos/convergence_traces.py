"""Outer-loop convergence from different initial power allocations.

Runs the alternation from three starting power policies on the same drop and
prints the per-iteration sum-rate traces: each is nondecreasing and they end
within a few percent of each other.
"""

from hetnet_jpcs import Scenario, SolverConfig, generate_instance, run_jpcs

scenario = Scenario(seed=11)
instance = generate_instance(scenario)
config = SolverConfig(seed=11)

finals = {}
for policy in ("uniform", "full", "random"):
    report = run_jpcs(instance, config, init_policy=policy)
    finals[policy] = report.sum_rate
    trace = " -> ".join(f"{v:.2f}" for v in report.sumrate_trace)
    print(f"{policy:>8}: {trace}   (converged={report.converged})")

spread = max(finals.values()) - min(finals.values())
print(f"\nfinal values: { {k: round(v, 2) for k, v in finals.items()} }")
print(f"spread: {spread:.2f} bps/Hz "
      f"({100 * spread / max(finals.values()):.1f}% of the best)")
