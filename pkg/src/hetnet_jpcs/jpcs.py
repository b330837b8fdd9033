"""Outer alternating loop (schedule <-> power control) and baselines.

Each outer iteration re-solves the schedule at the frozen per-user powers,
then re-optimizes powers for the chosen schedule.  A candidate iterate is
accepted only if it does not decrease the true sum rate, so the recorded
trace is nondecreasing by construction and the loop stops as soon as no
further improvement is made or the improvement falls below the outer
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (Assignment, NetworkInstance, PowerAllocation, SolverConfig,
                    active_tuples, assignment_from_tuples, check_feasibility,
                    empty_assignment, per_user_power, per_user_rates,
                    power_from_levels, restrict_antennas, sum_rate)
from .powerctl import alm_power_control
from .scheduler import mm_schedule_detailed

INIT_POLICIES = ("uniform", "full", "random")


def greedy_matching(inst: NetworkInstance, bulk: bool = False) -> Assignment:
    """Strongest-gain greedy schedule: best free (BS, sub-channel, antenna)
    tuple per user, highest gains first, one user per slot."""
    cand = []
    for i in range(inst.num_users):
        for b in inst.home_cell[i]:
            for m in range(inst.num_subchannels):
                for a in range(inst.num_antennas):
                    cand.append((-inst.gain[i, b, m, a], i, b, m, a))
    cand.sort()
    user_used = set()
    slot_used = set()
    chosen = []
    for _, i, b, m, a in cand:
        if i in user_used or (b, m) in slot_used:
            continue
        user_used.add(i)
        slot_used.add((b, m))
        chosen.append((i, b, m, a))
    asg = assignment_from_tuples(inst, chosen)
    if bulk:
        x = np.zeros_like(asg.x)
        best = {i: a for (i, b, m, a) in chosen}
        for i in range(inst.num_users):
            x[i, :, best.get(i, 0)] = 1.0
        asg = Assignment(asg.s, x)
    return asg


def scale_for_cross_tier(inst: NetworkInstance, asg: Assignment,
                         levels: np.ndarray, i_th: float) -> np.ndarray:
    """Uniformly shrink per-sub-channel powers until the cross-tier cap holds."""
    levels = np.asarray(levels, dtype=float).copy()
    acts = active_tuples(asg)
    for m in range(inst.num_subchannels):
        on_m = [(i, b, mm, a) for (i, b, mm, a) in acts if mm == m and b >= 1]
        load = sum(levels[i] * inst.gain[i, 0, m, a] for (i, b, mm, a) in on_m)
        if load > i_th and load > 0:
            for (i, b, mm, a) in on_m:
                levels[i] *= i_th / load
    return levels


def initial_power(inst: NetworkInstance, asg: Assignment, cfg: SolverConfig,
                  policy: str = "uniform",
                  rng: np.random.Generator | None = None) -> PowerAllocation:
    """Starting powers on the active tuples of ``asg``; cross-tier feasible."""
    if policy not in INIT_POLICIES:
        raise ValueError(f"unknown init policy {policy!r}")
    I = inst.num_users
    if policy == "uniform":
        levels = np.full(I, cfg.p_max / max(inst.num_subchannels, 1))
    elif policy == "full":
        levels = np.full(I, cfg.p_max)
    else:
        rng = rng or np.random.default_rng(cfg.seed)
        levels = rng.uniform(0.0, cfg.p_max / max(inst.num_subchannels, 1), size=I)
    levels = scale_for_cross_tier(inst, asg, levels, cfg.i_th)
    return power_from_levels(inst, asg, levels)


@dataclass
class AllocationReport:
    """Final allocation with trace and diagnostics of one solver run."""

    scheme: str
    assignment: Assignment
    power: PowerAllocation
    per_user_rate: np.ndarray
    sum_rate: float
    sumrate_trace: list
    outer_iterations: int
    converged: bool
    flags: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    qos_residual: dict = field(default_factory=dict)
    stage_counts: dict = field(default_factory=dict)
    binariness_gap: float = 0.0


def _build_report(scheme, inst, asg, p, cfg, trace_sr, converged, flags,
                  stage_counts, binariness_gap=0.0) -> AllocationReport:
    viol = check_feasibility(inst, asg, p, cfg)
    qos = {v.index[0]: v.excess for v in viol if v.constraint == "C3"}
    hard = [v for v in viol if v.constraint != "C3"]
    flags = list(flags)
    if qos and "qos_infeasible" not in flags:
        flags.append("qos_infeasible")
    return AllocationReport(
        scheme=scheme, assignment=asg, power=p,
        per_user_rate=per_user_rates(inst, asg, p),
        sum_rate=sum_rate(inst, asg, p),
        sumrate_trace=list(trace_sr),
        outer_iterations=max(len(trace_sr) - 1, 0),
        converged=converged, flags=flags, violations=hard,
        qos_residual=qos, stage_counts=dict(stage_counts),
        binariness_gap=binariness_gap)


def _empty_report(scheme, inst, cfg):
    asg = empty_assignment(inst)
    p = PowerAllocation(np.zeros_like(inst.gain))
    return _build_report(scheme, inst, asg, p, cfg, [0.0], True, [], {})


def _outer_loop(scheme, inst, cfg, power_stage, bulk=False,
                init_policy="uniform") -> AllocationReport:
    """Shared safeguarded alternation.

    ``power_stage(asg, warm_p, pm_state)`` returns ``(PowerAllocation, flags,
    stage_dict, pm_state')`` for the fixed schedule.  The starting point of
    the recorded trace is already a power-stage output at the initial greedy
    schedule (the policy powers are its warm input), so every recorded
    iterate lives in the same constraint regime and the trace is
    nondecreasing by construction.
    """
    if inst.num_users == 0:
        return _empty_report(scheme, inst, cfg)
    rng = np.random.default_rng(cfg.seed)
    fallback = cfg.p_max / max(inst.num_subchannels, 1)

    flags: list = []
    counts = {"mm_iterations": 0, "fw_iterations": 0, "sched_alm_rounds": 0,
              "power_alm_rounds": 0, "power_inner_steps": 0}
    gap = 0.0
    converged = False

    def merge_counts(pcounts):
        for k, v in pcounts.items():
            counts[k] = counts.get(k, 0) + v

    def merge_flags(fls):
        for fl in fls:
            if fl not in flags:
                flags.append(fl)

    asg = greedy_matching(inst, bulk=bulk)
    p_raw = initial_power(inst, asg, cfg, policy=init_policy, rng=rng)
    p, pflags, pcounts, pm_state = power_stage(asg, p_raw, None)
    merge_counts(pcounts)
    merge_flags(pflags)
    sr = sum_rate(inst, asg, p)
    trace_sr = [sr]

    def candidate(prev_asg, prev_p, pm=None):
        new_asg, sinfo = mm_schedule_detailed(inst, prev_asg, prev_p, cfg,
                                              bulk=bulk, fallback_power=fallback)
        counts["mm_iterations"] += sinfo.mm_iterations
        counts["fw_iterations"] += sinfo.fw_iterations
        counts["sched_alm_rounds"] += sinfo.alm_rounds
        merge_flags(sinfo.flags)
        nonlocal gap
        gap = max(gap, sinfo.binariness_gap)

        levels = per_user_power(prev_asg, prev_p)
        levels = np.where(levels > 0, levels, fallback)
        levels = np.minimum(levels, cfg.p_max)
        levels = scale_for_cross_tier(inst, new_asg, levels, cfg.i_th)
        warm = power_from_levels(inst, new_asg, levels)

        new_p, pfl, pcounts, pm_new = power_stage(new_asg, warm, pm)
        merge_counts(pcounts)
        return new_asg, new_p, sum_rate(inst, new_asg, new_p), pfl, pm_new

    for it in range(cfg.outer_max_iter):
        if it == 0:
            # the first iteration scores one candidate per canonical power
            # profile, each from a fresh multiplier state; the set is thus
            # identical whatever initial policy this run started from, which
            # keeps different initializations from settling in different
            # basins ("random" re-seeds from the config)
            new_sr = -np.inf
            for profile in INIT_POLICIES:
                alt = initial_power(inst, asg, cfg, policy=profile)
                a2, p2, sr2, fl2, pm2 = candidate(asg, alt, None)
                if sr2 > new_sr:
                    new_asg, new_p, new_sr, pflags, pm_new = a2, p2, sr2, fl2, pm2
        else:
            new_asg, new_p, new_sr, pflags, pm_new = candidate(asg, p, pm_state)

        if new_sr < sr - 1e-12:
            converged = True           # no further improvement through this move
            break

        delta = new_sr - sr
        asg, p, sr, pm_state = new_asg, new_p, new_sr, pm_new
        trace_sr.append(sr)
        merge_flags(pflags)
        if delta <= cfg.eps_outer and it >= 1:
            # a plateau right after the profile-scored first iteration can be
            # an artifact of the start matching the best profile; require one
            # lineage iteration before the plateau test may stop the run
            converged = True
            break
    else:
        flags.append("unconverged")

    return _build_report(scheme, inst, asg, p, cfg, trace_sr, converged,
                         flags, counts, binariness_gap=gap)


def _alm_stage(inst, cfg):
    """Power stage: warm-started solve plus one canonical restart.

    The restart (uniform budget split, cap-scaled) is init-independent, which
    stops different initial power policies from locking into different local
    equilibria through their warm path alone.  The stage is a pure function
    of (schedule, warm powers, multiplier state); the caller decides which
    returned multiplier state to commit.
    """

    def stage(asg, warm, pm_state):
        p, ptrace = alm_power_control(inst, asg, warm, cfg,
                                      warm_multipliers=pm_state)
        counts = {"power_alm_rounds": ptrace.rounds,
                  "power_inner_steps": ptrace.inner_steps}
        out_pm = ptrace.multipliers
        levels = np.full(inst.num_users, cfg.p_max / max(inst.num_subchannels, 1))
        levels = scale_for_cross_tier(inst, asg, levels, cfg.i_th)
        p2, ptrace2 = alm_power_control(inst, asg,
                                        power_from_levels(inst, asg, levels), cfg)
        counts["power_alm_rounds"] += ptrace2.rounds
        counts["power_inner_steps"] += ptrace2.inner_steps
        if sum_rate(inst, asg, p2) > sum_rate(inst, asg, p):
            p, ptrace, out_pm = p2, ptrace2, ptrace2.multipliers
        return p, ptrace.flags, counts, out_pm

    return stage


def run_jpcs(inst: NetworkInstance, cfg: SolverConfig,
             init_policy: str = "uniform", scheme: str = "jpcs") -> AllocationReport:
    """Full alternation: penalty/minorant scheduling plus ALM power control."""
    return _outer_loop(scheme, inst, cfg, _alm_stage(inst, cfg), bulk=False,
                       init_policy=init_policy)


def run_epa(inst: NetworkInstance, cfg: SolverConfig,
            scheme: str = "epa") -> AllocationReport:
    """Equal power allocation baseline: every scheduled user transmits at the
    budget, shrunk uniformly per sub-channel when the cross-tier cap binds;
    the schedule is still re-optimized for those powers (no power ALM)."""

    def stage(asg, warm, pm_state):
        levels = np.full(inst.num_users, cfg.p_max)
        levels = scale_for_cross_tier(inst, asg, levels, cfg.i_th)
        return power_from_levels(inst, asg, levels), [], {}, None

    return _outer_loop(scheme, inst, cfg, stage, bulk=False)


def run_bulk_as(inst: NetworkInstance, cfg: SolverConfig,
                scheme: str = "bulk") -> AllocationReport:
    """Per-user (not per-sub-channel) antenna selection variant."""
    return _outer_loop(scheme, inst, cfg, _alm_stage(inst, cfg), bulk=True)


def run_single_antenna(inst: NetworkInstance, cfg: SolverConfig,
                       scheme: str = "single_antenna") -> AllocationReport:
    """Joint pipeline restricted to each user's first antenna."""
    return run_jpcs(restrict_antennas(inst, 1), cfg, scheme=scheme)
