"""Experiment harness: seeded Monte-Carlo sweeps written as CSV.

Commands (also exposed on the command line as ``hetnet-jpcs <command>``):

* ``sweep-ith``      -- mean sum rate per scheme across the cross-tier cap grid
* ``sweep-penalty``  -- rate and binariness gap across the penalty-weight grid
* ``convergence``    -- per-iteration sum-rate traces for several power inits
* ``oracle-gap``     -- solver vs exhaustive-search gap on tiny fixtures

Config files are flat ``key = value`` text (``#`` comments); dBm values are
converted to watts only at this boundary.  All commands are deterministic
under a fixed seed and drop seeds are derived per drop, so results do not
depend on the worker-pool size (override the pool with the
``HETNET_JPCS_WORKERS`` environment variable).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .chansim import Scenario, dbm_to_watts, generate_instance
from .jpcs import run_bulk_as, run_epa, run_jpcs, run_single_antenna
from .model import SolverConfig, restrict_antennas
from .oracle import GuardError, grid_slack, oracle_optimum
from .scheduler import rate_coefficients
from . import jpcs as jpcs_mod
from . import model as model_mod

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_IO = 3
EXIT_GUARD = 4
EXIT_UNCONVERGED = 5

SWEEP_SCHEMES = ("jpcs_A3", "jpcs_A2", "bulk_A2", "epa", "jpcs_A1")


class ConfigError(ValueError):
    """Malformed or inconsistent harness configuration."""


@dataclass
class HarnessConfig:
    """Scenario + solver + experiment parameters, mirroring the config file."""

    scenario: Scenario
    pmax_dbm: float = 23.0
    ith_dbm: float = -90.0
    r_min: float = 5.0
    mu1: float | None = None          # None = automatic weight per schedule
    mu2: float | None = None
    psi0: float = 1.0
    psi_cap: float = 2.0 ** 20
    eps_outer: float = 0.1
    eps_power: float = 1e-3
    t_j_max: int = 25
    alm_max_iter: int = 40
    inner_max_iter: int = 300
    outer_max_iter: int = 100
    seed: int = 0
    drops: int = 50
    ith_sweep_dbm: tuple = (-110.0, -105.0, -100.0, -95.0, -90.0, -85.0,
                            -80.0, -75.0, -70.0)
    mu_factors: tuple = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)
    init_policies: tuple = ("uniform", "full", "random")
    oracle_levels: int = 200
    oracle_fixtures: int = 20
    unconverged_exit_threshold: float = 0.2

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            p_max=dbm_to_watts(self.pmax_dbm), i_th=dbm_to_watts(self.ith_dbm),
            r_min=self.r_min, mu1=self.mu1, mu2=self.mu2, psi0=self.psi0,
            psi_cap=self.psi_cap, eps_outer=self.eps_outer,
            eps_power=self.eps_power, t_j_max=self.t_j_max,
            alm_max_iter=self.alm_max_iter, inner_max_iter=self.inner_max_iter,
            outer_max_iter=self.outer_max_iter, seed=self.seed)


def default_config() -> HarnessConfig:
    return HarnessConfig(scenario=Scenario())


_SCENARIO_KEYS = {f.name: f.type for f in fields(Scenario)}

_FLOAT_KEYS = ("pmax_dbm", "ith_dbm", "r_min", "psi0", "psi_cap", "eps_outer",
               "eps_power", "unconverged_exit_threshold")
_INT_KEYS = ("t_j_max", "alm_max_iter", "inner_max_iter", "outer_max_iter",
             "seed", "drops", "oracle_levels", "oracle_fixtures")
_OPT_FLOAT_KEYS = ("mu1", "mu2")
_LIST_FLOAT_KEYS = ("ith_sweep_dbm", "mu_factors")
_LIST_STR_KEYS = ("init_policies",)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _SCENARIO_KEYS:
            if key in ("num_smallcells", "users_total", "num_subchannels",
                       "num_antennas", "seed"):
                return int(raw)
            return float(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _OPT_FLOAT_KEYS:
            return None if raw.lower() in ("auto", "none") else float(raw)
        if key in _LIST_FLOAT_KEYS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if key in _LIST_STR_KEYS:
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from err
    raise ConfigError(f"unknown config key {key!r}")


def load_config(path: str) -> HarnessConfig:
    """Parse a flat key = value config file."""
    scen_kwargs, top_kwargs = {}, {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (t.strip() for t in line.split("=", 1))
            val = _parse_value(key, raw)
            if key in _SCENARIO_KEYS and key != "seed":
                scen_kwargs[key] = val
            elif key == "seed":
                top_kwargs["seed"] = val
            else:
                top_kwargs[key] = val
    try:
        scenario = Scenario(**scen_kwargs, seed=top_kwargs.get("seed", 0))
        hc = HarnessConfig(scenario=scenario, **top_kwargs)
        hc.solver_config()      # validate derived solver parameters too
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    for pol in hc.init_policies:
        if pol not in jpcs_mod.INIT_POLICIES:
            raise ConfigError(f"unknown init policy {pol!r}")
    return hc


def dump_config(hc: HarnessConfig, path: str) -> None:
    """Write a config in canonical order; load(dump(x)) == x."""
    lines = []
    for f in fields(Scenario):
        if f.name == "seed":
            continue
        lines.append(f"{f.name} = {getattr(hc.scenario, f.name)!r}")
    for key in _FLOAT_KEYS + _INT_KEYS:
        lines.append(f"{key} = {getattr(hc, key)!r}")
    for key in _OPT_FLOAT_KEYS:
        v = getattr(hc, key)
        lines.append(f"{key} = {'auto' if v is None else repr(v)}")
    for key in _LIST_FLOAT_KEYS:
        lines.append(f"{key} = {', '.join(repr(v) for v in getattr(hc, key))}")
    for key in _LIST_STR_KEYS:
        lines.append(f"{key} = {', '.join(getattr(hc, key))}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _drop_seeds(seed: int, drops: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(drops)]


def _n_workers() -> int:
    env = os.environ.get("HETNET_JPCS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"bad HETNET_JPCS_WORKERS value {env!r}") from err
    return max(1, min(4, os.cpu_count() or 1))


def _pmap(fn, tasks):
    workers = _n_workers()
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _mean_ci(values) -> tuple:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean()) if arr.size else 0.0
    if arr.size < 2:
        return mean, 0.0
    return mean, float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


# ---------------------------------------------------------------------------
# sweep-ith

def _sweep_ith_drop(task):
    hc, drop_seed = task
    sc3 = replace(hc.scenario, num_antennas=3, seed=drop_seed)
    inst3 = generate_instance(sc3)
    inst2 = restrict_antennas(inst3, 2)
    inst1 = restrict_antennas(inst3, 1)
    rows = []
    for ith in hc.ith_sweep_dbm:
        cfg = replace(hc.solver_config(), i_th=dbm_to_watts(ith), seed=drop_seed)
        runs = {
            "jpcs_A3": run_jpcs(inst3, cfg),
            "jpcs_A2": run_jpcs(inst2, cfg),
            "bulk_A2": run_bulk_as(inst2, cfg),
            "epa": run_epa(inst2, cfg),
            "jpcs_A1": run_jpcs(inst1, cfg),
        }
        for scheme in SWEEP_SCHEMES:
            rep = runs[scheme]
            rows.append((float(ith), scheme, rep.sum_rate, rep.converged))
    return rows


def cmd_sweep_ith(hc: HarnessConfig, out_path: str) -> int:
    """Mean sum rate (with 95% CI) per scheme over the cross-tier cap grid."""
    tasks = [(hc, s) for s in _drop_seeds(hc.seed, hc.drops)]
    flat = [row for rows in _pmap(_sweep_ith_drop, tasks) for row in rows]
    agg = []
    n_total = n_bad = 0
    for ith in sorted(set(r[0] for r in flat)):
        for scheme in sorted(set(r[1] for r in flat)):
            vals = [r[2] for r in flat if r[0] == ith and r[1] == scheme]
            mean, ci = _mean_ci(vals)
            agg.append((ith, scheme, mean, ci))
    n_total = len(flat)
    n_bad = sum(1 for r in flat if not r[3])
    _write_csv(out_path, ("ith_dbm", "scheme", "mean_sumrate", "ci95"), agg)
    if n_total and n_bad / n_total > hc.unconverged_exit_threshold:
        return EXIT_UNCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-penalty

def _penalty_drop(task):
    hc, drop_seed = task
    sc = replace(hc.scenario, seed=drop_seed)
    inst = generate_instance(sc)
    base = replace(hc.solver_config(), seed=drop_seed)
    # reference coefficient scale at the shared starting point
    asg0 = jpcs_mod.greedy_matching(inst)
    p0 = jpcs_mod.initial_power(inst, asg0, base, policy="uniform")
    rmax = float(rate_coefficients(inst, asg0, p0).rbar.max())
    rmax = rmax if rmax > 0 else 1.0
    rows = []
    for f in hc.mu_factors:
        mu = max(f * rmax, 1e-12)
        cfg = replace(base, mu1=mu, mu2=mu)
        rep = run_jpcs(inst, cfg)
        rows.append((float(f), rep.sum_rate, rep.binariness_gap, rep.converged))
    return rows


def cmd_sweep_penalty(hc: HarnessConfig, out_path: str) -> int:
    """Sum rate and binariness gap across the penalty-weight grid.

    The ``mu`` column is the weight as a multiple of the largest rate
    coefficient at the shared starting point (0 means a vanishing weight)."""
    tasks = [(hc, s) for s in _drop_seeds(hc.seed, hc.drops)]
    flat = [row for rows in _pmap(_penalty_drop, tasks) for row in rows]
    agg = []
    for f in sorted(set(r[0] for r in flat)):
        vals = [r[1] for r in flat if r[0] == f]
        gaps = [r[2] for r in flat if r[0] == f]
        mean, _ = _mean_ci(vals)
        agg.append((f, mean, max(gaps)))
    _write_csv(out_path, ("mu", "mean_sumrate", "max_binariness_gap"), agg)
    n_bad = sum(1 for r in flat if not r[3])
    if flat and n_bad / len(flat) > hc.unconverged_exit_threshold:
        return EXIT_UNCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# convergence

def _convergence_drop(task):
    hc, drop_idx, drop_seed = task
    sc = replace(hc.scenario, seed=drop_seed)
    inst = generate_instance(sc)
    cfg = replace(hc.solver_config(), seed=drop_seed)
    rows = []
    for policy in hc.init_policies:
        rep = run_jpcs(inst, cfg, init_policy=policy)
        for it, sr in enumerate(rep.sumrate_trace):
            rows.append((drop_idx, policy, it, sr, rep.converged))
    return rows


def cmd_convergence(hc: HarnessConfig, out_path: str) -> int:
    """Per-outer-iteration sum rate for each initial power policy."""
    seeds = _drop_seeds(hc.seed, hc.drops)
    tasks = [(hc, i, s) for i, s in enumerate(seeds)]
    flat = [row for rows in _pmap(_convergence_drop, tasks) for row in rows]
    flat.sort(key=lambda r: (r[0], r[1], r[2]))
    _write_csv(out_path, ("drop", "init", "iteration", "sumrate"),
               [r[:4] for r in flat])
    n_runs = hc.drops * len(hc.init_policies)
    n_bad = len({(r[0], r[1]) for r in flat if not r[4]})
    if n_runs and n_bad / n_runs > hc.unconverged_exit_threshold:
        return EXIT_UNCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle-gap

def tiny_fixture(hc: HarnessConfig, k: int):
    """k-th tiny fixture: dimensions in {1, 2}, no minimum-rate requirement.

    The joint solve and the exhaustive search then optimize the identical
    problem; the QoS path is exercised by the other commands."""
    rng = np.random.default_rng(np.random.SeedSequence((hc.seed, k)).generate_state(1)[0])
    sc = replace(
        hc.scenario,
        macro_radius_m=min(hc.scenario.macro_radius_m, 300.0),
        num_smallcells=int(rng.integers(1, 3)),
        users_total=int(rng.integers(1, 3)),
        num_subchannels=int(rng.integers(1, 3)),
        num_antennas=int(rng.integers(1, 3)),
        seed=int(rng.integers(0, 2 ** 31)),
    )
    inst = generate_instance(sc)
    cfg = replace(hc.solver_config(), r_min=0.0, seed=sc.seed)
    return sc, inst, cfg


def _oracle_gap_task(task):
    hc, k = task
    sc, inst, cfg = tiny_fixture(hc, k)
    rep = run_jpcs(inst, cfg)
    _, _, best = oracle_optimum(inst, cfg, hc.oracle_levels)
    slack = grid_slack(inst, rep.assignment, rep.power, cfg, hc.oracle_levels)
    gap = (best - rep.sum_rate) / best if best > 0 else 0.0
    dominated = rep.sum_rate <= best + slack + 1e-9
    return (k, sc.users_total, sc.num_smallcells, sc.num_subchannels,
            sc.num_antennas, rep.sum_rate, best, gap, slack, dominated)


def cmd_oracle_gap(hc: HarnessConfig, out_path: str) -> int:
    """Joint solver vs exhaustive search on tiny fixtures."""
    rows = _pmap(_oracle_gap_task, [(hc, k) for k in range(hc.oracle_fixtures)])
    rows.sort(key=lambda r: r[0])
    _write_csv(out_path, ("fixture", "users", "smallcells", "subchannels",
                          "antennas", "jpcs_sumrate", "oracle_sumrate",
                          "rel_gap", "grid_slack", "dominance_ok"), rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI

_COMMANDS = {
    "sweep-ith": cmd_sweep_ith,
    "sweep-penalty": cmd_sweep_penalty,
    "convergence": cmd_convergence,
    "oracle-gap": cmd_oracle_gap,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hetnet-jpcs",
        description="Monte-Carlo experiment harness for the uplink HetNet "
                    "resource allocator (CSV output).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="flat key = value config file "
                                        "(defaults used when omitted)")
        p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--drops", type=int, help="override the drop count")
    args = parser.parse_args(argv)

    try:
        if args.config:
            hc = load_config(args.config)
        else:
            hc = default_config()
    except ConfigError as err:
        print(f"error: bad config: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OSError as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return EXIT_IO

    if args.seed is not None:
        hc.seed = args.seed
        hc.scenario = replace(hc.scenario, seed=args.seed)
    if args.drops is not None:
        if args.drops <= 0:
            print("error: bad config: drops must be > 0", file=sys.stderr)
            return EXIT_BAD_CONFIG
        hc.drops = args.drops

    try:
        return _COMMANDS[args.command](hc, args.out)
    except GuardError as err:
        print(f"error: size guard: {err}", file=sys.stderr)
        return EXIT_GUARD
    except OSError as err:
        print(f"error: I/O failure: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
