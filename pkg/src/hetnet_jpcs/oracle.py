"""Independent brute-force reference for tiny instances.

Exhaustive schedule enumeration plus dense power grid search, implemented
from the constraint definitions with straightforward loops so it shares no
code path with the solvers it validates.  Hard size guards refuse anything
that would require subsampling.
"""

from __future__ import annotations

import math

import numpy as np

from .model import (Assignment, NetworkInstance, PowerAllocation, SolverConfig,
                    assignment_from_tuples)

ENUM_GUARD = 10 ** 6
GRID_GUARD = 10 ** 7
MAX_GRID_TUPLES = 3


class GuardError(RuntimeError):
    """Instance exceeds the exhaustive-search size guards."""


def enumerate_assignments(inst: NetworkInstance):
    """Yield every distinct feasible schedule exactly once.

    Per user the choices are: idle, or one free (small cell, sub-channel)
    slot combined with one antenna for that slot.  Antennas on inactive
    (user, sub-channel) pairs are canonical (antenna 0), so equivalent
    configurations are not repeated.
    """
    I, nb, M, A = inst.gain.shape
    n_slots = (nb - 1) * M
    if I > 0 and (n_slots + 1) ** I * A ** I > ENUM_GUARD:
        raise GuardError(f"enumeration size ({n_slots + 1}^{I} * {A}^{I}) "
                         f"exceeds {ENUM_GUARD}")

    options = []
    for i in range(I):
        opts = [None]
        for b in inst.home_cell[i]:
            for m in range(M):
                for a in range(A):
                    opts.append((b, m, a))
        options.append(opts)

    def rec(i, used_slots, chosen):
        if i == I:
            yield assignment_from_tuples(inst, chosen)
            return
        for opt in options[i]:
            if opt is None:
                yield from rec(i + 1, used_slots, chosen)
            else:
                b, m, a = opt
                if (b, m) in used_slots:
                    continue
                yield from rec(i + 1, used_slots | {(b, m)}, chosen + [(i, b, m, a)])

    if I == 0:
        yield assignment_from_tuples(inst, [])
    else:
        yield from rec(0, frozenset(), [])


def feasibility_violations_brute(inst: NetworkInstance, asg: Assignment,
                                 p: PowerAllocation, cfg: SolverConfig,
                                 rtol: float = 1e-9):
    """Loop-based re-derivation of the constraint checks; returns
    ``(name, index)`` pairs for every violation."""
    I, nb, M, A = inst.gain.shape
    out = []
    for i in range(I):
        for b in range(nb):
            for m in range(M):
                for a in range(A):
                    if p.p[i, b, m, a] < 0:
                        out.append(("C4", (i, b, m, a)))
    for i in range(I):
        for b in range(nb):
            for m in range(M):
                v = asg.s[i, b, m]
                if min(abs(v), abs(v - 1)) > 1e-12:
                    out.append(("C9", (i, b, m)))
        for m in range(M):
            for a in range(A):
                v = asg.x[i, m, a]
                if min(abs(v), abs(v - 1)) > 1e-12:
                    out.append(("C8", (i, m, a)))
    for b in range(nb):
        for m in range(M):
            if sum(asg.s[i, b, m] for i in range(I)) > 1 + rtol:
                out.append(("C5", (b, m)))
    for i in range(I):
        if asg.s[i].sum() > 1 + rtol:
            out.append(("C6", (i,)))
    for i in range(I):
        for m in range(M):
            tot = sum(asg.x[i, m, a] for a in range(A))
            sched_here = sum(asg.s[i, b, m] for b in range(nb)) > 0.5
            if sched_here and abs(tot - 1) > rtol:
                out.append(("C7", (i, m)))
            elif not sched_here and tot > 1 + rtol:
                out.append(("C7", (i, m)))
    # active power per user / cross-tier load / per-user rate, from scratch
    for i in range(I):
        tot = 0.0
        for b in range(nb):
            for m in range(M):
                for a in range(A):
                    tot += asg.x[i, m, a] * asg.s[i, b, m] * p.p[i, b, m, a]
        if tot > cfg.p_max * (1 + rtol):
            out.append(("C1", (i,)))
    for m in range(M):
        load = 0.0
        for i in range(I):
            for b in range(1, nb):
                for a in range(A):
                    load += asg.x[i, m, a] * asg.s[i, b, m] * p.p[i, b, m, a] \
                        * inst.gain[i, 0, m, a]
        if load > cfg.i_th * (1 + rtol) + (0.0 if cfg.i_th > 0 else rtol):
            out.append(("C2", (m,)))
    if cfg.r_min > 0:
        for i in range(I):
            r_i = _brute_rate(inst, asg, p, i)
            if r_i is not None and r_i < cfg.r_min * (1 - rtol):
                out.append(("C3", (i,)))
    return out


def _brute_rate(inst, asg, p, i):
    """Rate of user i's active tuple computed by direct loops, None if idle."""
    I, nb, M, A = inst.gain.shape
    for b in range(1, nb):
        for m in range(M):
            if asg.s[i, b, m] > 0.5:
                for a in range(A):
                    if asg.x[i, m, a] > 0.5:
                        interf = 0.0
                        for l in range(I):
                            if l == i:
                                continue
                            for b2 in range(nb):
                                if b2 == b:
                                    continue
                                for a2 in range(A):
                                    interf += (asg.s[l, b2, m] * asg.x[l, m, a2]
                                               * p.p[l, b2, m, a2]
                                               * inst.gain[l, b, m, a2])
                        sig = p.p[i, b, m, a] * inst.gain[i, b, m, a]
                        return math.log2(1 + sig / (inst.noise_power + interf))
    return None


def _grid_active(inst, asg):
    """Active tuples plus direct-loop coupling arrays for the grid search."""
    I, nb, M, A = inst.gain.shape
    tuples = []
    for i in range(I):
        for b in range(1, nb):
            for m in range(M):
                if asg.s[i, b, m] > 0.5:
                    a = int(np.argmax(asg.x[i, m]))
                    tuples.append((i, b, m, a))
    k = len(tuples)
    gown = np.array([inst.gain[i, b, m, a] for (i, b, m, a) in tuples])
    g0 = np.array([inst.gain[i, 0, m, a] for (i, b, m, a) in tuples])
    gint = np.zeros((k, k))
    for j, (i, b, m, a) in enumerate(tuples):
        for j2, (i2, b2, m2, a2) in enumerate(tuples):
            if j2 != j and m2 == m and b2 != b:
                gint[j, j2] = inst.gain[i2, b, m, a2]
    return tuples, gown, g0, gint


def _tuple_power_caps(gown, g0, cfg):
    """Largest power each tuple could ever use: budget and solo cross-tier cap."""
    hi = np.full(len(gown), cfg.p_max)
    pos = g0 > 0
    hi[pos] = np.minimum(hi[pos], cfg.i_th / g0[pos])
    return hi


def grid_power_search(inst: NetworkInstance, asg: Assignment, cfg: SolverConfig,
                      levels: int = 200):
    """Best feasible point on the per-tuple uniform power grids
    ``{0, hi/levels, ..., hi}`` with ``hi = min(p_max, i_th / gain_to_macro)``
    (powers beyond ``hi`` can never be feasible, so gridding them would only
    waste resolution).

    Returns ``(PowerAllocation, sum_rate)``; ``(None, -inf)`` if no grid
    point satisfies the constraints for this schedule.
    """
    tuples, gown, g0, gint = _grid_active(inst, asg)
    k = len(tuples)
    if k > MAX_GRID_TUPLES or (levels + 1) ** k > GRID_GUARD:
        raise GuardError(f"grid size (levels+1)^{k} exceeds {GRID_GUARD} "
                         f"or more than {MAX_GRID_TUPLES} active tuples")
    if k == 0:
        return PowerAllocation(np.zeros_like(inst.gain)), 0.0

    his = _tuple_power_caps(gown, g0, cfg)
    axes = []
    for hi in his:
        axis = np.linspace(0.0, hi, levels + 1)
        axis[0], axis[-1] = 0.0, hi
        axes.append(axis)
    chans = np.array([m for (_, _, m, _) in tuples])
    best_val, best_q = -np.inf, None

    # chunk over the first tuple's level to bound memory
    rest = np.meshgrid(*axes[1:], indexing="ij") if k > 1 else []
    rest = [r.ravel() for r in rest]
    n_rest = rest[0].size if rest else 1
    for q0 in axes[0]:
        Q = np.empty((k, n_rest))
        Q[0] = q0
        for j in range(1, k):
            Q[j] = rest[j - 1]
        D = inst.noise_power + gint @ Q
        R = np.log2(1.0 + (Q * gown[:, None]) / D)
        feas = np.ones(n_rest, dtype=bool)
        for m in np.unique(chans):
            on_m = chans == m
            load = g0[on_m] @ Q[on_m]
            feas &= load <= cfg.i_th * (1 + 1e-9) + (0.0 if cfg.i_th > 0 else 1e-300)
        if cfg.r_min > 0:
            feas &= np.all(R >= cfg.r_min * (1 - 1e-9), axis=0)
        if not feas.any():
            continue
        vals = R.sum(axis=0)
        vals[~feas] = -np.inf
        j_best = int(np.argmax(vals))
        if vals[j_best] > best_val:
            best_val = float(vals[j_best])
            best_q = Q[:, j_best].copy()

    if best_q is None:
        return None, -np.inf
    p = np.zeros_like(inst.gain)
    for j, (i, b, m, a) in enumerate(tuples):
        p[i, b, m, a] = best_q[j]
    pa = PowerAllocation(p)
    also = feasibility_violations_brute(inst, asg, pa, cfg)
    if also:
        raise AssertionError(f"grid winner failed the brute checks: {also}")
    return pa, best_val


def oracle_optimum(inst: NetworkInstance, cfg: SolverConfig, levels: int = 200):
    """Exhaustive maximum over schedules x power grid; the reference value
    for solver-gap reporting.  Returns ``(Assignment, PowerAllocation, rate)``."""
    best = None
    for asg in enumerate_assignments(inst):
        p, val = grid_power_search(inst, asg, cfg, levels)
        if p is None:
            continue
        if best is None or val > best[2] + 1e-15:
            best = (asg, p, val)
    if best is None:
        raise RuntimeError("no feasible schedule found (unexpected: the empty "
                           "schedule is always feasible)")
    return best


def grid_slack(inst: NetworkInstance, asg: Assignment, p: PowerAllocation,
               cfg: SolverConfig, levels: int = 200) -> float:
    """One-grid-cell rounding loss at (asg, p): the rate lost by flooring the
    active powers to the grid of :func:`grid_power_search`.  Bounds how far
    above the grid optimum any feasible point with this schedule can sit."""
    tuples, gown, g0, gint = _grid_active(inst, asg)
    if not tuples:
        return 0.0
    steps = _tuple_power_caps(gown, g0, cfg) / levels
    q = np.array([p.p[i, b, m, a] for (i, b, m, a) in tuples])
    q_floor = np.where(steps > 0,
                       np.floor(np.minimum(q, steps * levels)
                                / np.maximum(steps, 1e-300)) * steps,
                       0.0)

    def val(qv):
        D = inst.noise_power + gint @ qv
        return float(np.log2(1.0 + (qv * gown) / D).sum())

    return max(val(q) - val(q_floor), 0.0)
