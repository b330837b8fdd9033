"""Augmented-Lagrangian power control for a fixed binary schedule.

With one active (BS, sub-channel, antenna) tuple per scheduled user the free
variables are one transmit power per scheduled user.  The sum rate is
maximized by projected gradient ascent (Armijo backtracking) on the
augmented objective, alternated with hinge-clamped multiplier updates for
the per-user budget, the per-sub-channel cross-tier cap and the per-user
minimum rate, while the penalty doubles up to a cap.  Constraints are
normalized by their caps so one feasibility tolerance fits all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import almcore
from .model import (LN2, Assignment, NetworkInstance, PowerAllocation,
                    SolverConfig, active_tuples)

FEAS_TOL = 1e-6     # normalized violation accepted as feasible
QOS_TOL = 1e-9


@dataclass
class PowerMultipliers:
    """Multipliers for budget (lam), cross-tier (theta), min-rate (phi).

    ``lam`` and ``phi`` are indexed like ``users`` (the scheduled users in
    active-tuple order); ``theta`` is per sub-channel.
    """

    lam: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    psi: float
    users: np.ndarray = None

    def __post_init__(self):
        if np.any(self.lam < 0) or np.any(self.theta < 0) or np.any(self.phi < 0):
            raise ValueError("multipliers must be >= 0")
        if self.psi <= 0:
            raise ValueError("psi must be > 0")
        if self.users is None:
            self.users = np.arange(len(self.lam))


@dataclass
class _ActiveSet:
    """Per-active-tuple arrays for vectorized rate evaluation."""

    tuples: list
    users: np.ndarray     # (n,)
    chans: np.ndarray     # (n,)
    gown: np.ndarray      # serving gain per tuple
    g0: np.ndarray        # cross-tier gain per tuple
    gint: np.ndarray      # (n, n) interference coupling

    @property
    def n(self):
        return len(self.tuples)


def _active_set(inst: NetworkInstance, asg: Assignment) -> _ActiveSet:
    tuples = [(i, b, m, a) for (i, b, m, a) in active_tuples(asg) if b >= 1]
    n = len(tuples)
    users = np.array([t[0] for t in tuples], dtype=int)
    chans = np.array([t[2] for t in tuples], dtype=int)
    gown = np.array([inst.gain[i, b, m, a] for (i, b, m, a) in tuples])
    g0 = np.array([inst.gain[i, 0, m, a] for (i, b, m, a) in tuples])
    gint = np.zeros((n, n))
    for j, (i, b, m, a) in enumerate(tuples):
        for k, (i2, b2, m2, a2) in enumerate(tuples):
            if k != j and m2 == m:
                gint[j, k] = inst.gain[i2, b, m, a2]
    return _ActiveSet(tuples, users, chans, gown, g0, gint)


def _rates(act: _ActiveSet, q: np.ndarray, noise: float):
    D = noise + act.gint @ q
    S = q * act.gown
    return np.log2(1.0 + S / D), D, S


def _sum_rate_grad(act: _ActiveSet, q: np.ndarray, noise: float):
    R, D, S = _rates(act, q, noise)
    t1 = act.gown / (LN2 * (D + S))
    coef = (1.0 / (D + S) - 1.0 / D) / LN2
    grad = t1 + act.gint.T @ coef
    return R, grad, t1, coef, D, S


def active_rate_and_grad(inst: NetworkInstance, asg: Assignment,
                         p: PowerAllocation):
    """Rates of the active tuples and the sum-rate gradient w.r.t. their powers.

    The gradient carries both the direct SINR term and the negative coupling
    onto co-channel users; entries are ordered like ``active_tuples(asg)``.
    """
    act = _active_set(inst, asg)
    q = np.array([p.p[i, b, m, a] for (i, b, m, a) in act.tuples])
    R, grad, *_ = _sum_rate_grad(act, q, inst.noise_power)
    return R, grad


def qos_supportable_rows(act: _ActiveSet, cfg: SolverConfig,
                         noise: float) -> np.ndarray:
    """Indices of active tuples whose minimum rate is jointly attainable.

    Per sub-channel, the minimum-power solution of the target-SINR linear
    system is computed; if it exists within the per-user budget and the
    cross-tier cap, those users are supportable.  Otherwise the user whose
    minimum power loads the macro BS the most is removed and the test
    repeats.  Rows left out would only feed a divergent multiplier chase of
    an unattainable target; they are reported as residuals instead.
    """
    if cfg.r_min <= 0:
        return np.zeros(0, dtype=int)
    tau = 2.0 ** cfg.r_min - 1.0
    supported = []
    for m in np.unique(act.chans):
        rows = list(np.nonzero(act.chans == m)[0])
        while rows:
            idx = np.array(rows)
            g = act.gown[idx]
            C = act.gint[np.ix_(idx, idx)] / g[:, None]
            rhs = tau * noise / g
            try:
                qmin = np.linalg.solve(np.eye(len(idx)) - tau * C, rhs)
            except np.linalg.LinAlgError:
                qmin = None
            ok = qmin is not None and np.all(qmin > 0) \
                and np.all(qmin <= cfg.p_max * (1 + 1e-9)) \
                and float(qmin @ act.g0[idx]) <= cfg.i_th * (1 + 1e-9)
            if ok:
                supported.extend(rows)
                break
            if qmin is None or np.any(qmin <= 0):
                drop = int(np.argmin(act.gown[idx]))       # weakest link
            else:
                drop = int(np.argmax(qmin * act.g0[idx]))  # costliest at the macro
            rows.pop(drop)
    return np.array(sorted(supported), dtype=int)


def _power_problem(inst: NetworkInstance, act: _ActiveSet, cfg: SolverConfig,
                   c3_rows: np.ndarray | None = None) -> almcore.ConstrainedProblem:
    """Power subproblem; ``c3_rows`` selects which users carry a min-rate row
    (default all scheduled users)."""
    noise = inst.noise_power
    n = act.n
    M = inst.num_subchannels

    def objective(q):
        R, _, _ = _rates(act, q, noise)
        return float(R.sum())

    def objective_grad(q):
        _, grad, *_ = _sum_rate_grad(act, q, noise)
        return grad

    blocks = []
    p_scale = max(cfg.p_max, 1e-300)
    c1_jac = np.eye(n) / p_scale
    blocks.append(almcore.ConstraintBlock(
        fun=lambda q: q / p_scale - cfg.p_max / p_scale,
        jac=lambda q: c1_jac,
        labels=tuple(f"C1[user={i}]" for i in act.users)))

    i_scale = cfg.i_th if cfg.i_th > 0 else 1.0
    c2_mat = np.zeros((M, n))
    for j in range(n):
        c2_mat[act.chans[j], j] = act.g0[j] / i_scale
    blocks.append(almcore.ConstraintBlock(
        fun=lambda q: c2_mat @ q - cfg.i_th / i_scale,
        jac=lambda q: c2_mat,
        labels=tuple(f"C2[m={m}]" for m in range(M))))

    if cfg.r_min > 0 and n > 0:
        rows = np.arange(n) if c3_rows is None else np.asarray(c3_rows, dtype=int)
        if rows.size:
            rho = max(cfg.r_min, 1.0)

            def c3_fun(q):
                R, _, _ = _rates(act, q, noise)
                return (cfg.r_min - R[rows]) / rho

            def c3_jac(q):
                _, _, t1, coef, _, _ = _sum_rate_grad(act, q, noise)
                jr = np.diag(t1) + coef[:, None] * act.gint
                return -jr[rows] / rho

            blocks.append(almcore.ConstraintBlock(
                fun=c3_fun, jac=c3_jac,
                labels=tuple(f"C3[user={act.users[j]}]" for j in rows)))

    return almcore.ConstrainedProblem(objective, objective_grad,
                                      inequalities=blocks,
                                      lower=np.zeros(n))


def _split_multipliers(ms: almcore.MultiplierState, act: _ActiveSet,
                       M: int, c3_rows: np.ndarray) -> PowerMultipliers:
    n = act.n
    lam = ms.lam[:n].copy()
    theta = ms.lam[n:n + M].copy()
    phi = np.zeros(n)
    phi[c3_rows] = ms.lam[n + M:]
    return PowerMultipliers(lam, theta, phi, ms.gamma, act.users.copy())


def power_augmented_value(inst: NetworkInstance, asg: Assignment,
                          p: PowerAllocation, pm: PowerMultipliers,
                          cfg: SolverConfig) -> float:
    """Augmented power objective at ``p`` for the given multipliers."""
    act = _active_set(inst, asg)
    prob = _power_problem(inst, act, cfg)
    q = np.array([p.p[i, b, m, a] for (i, b, m, a) in act.tuples])
    has_c3 = cfg.r_min > 0 and act.n > 0
    lam = np.concatenate([pm.lam, pm.theta] + ([pm.phi] if has_c3 else []))
    ms = almcore.MultiplierState(lam, np.zeros(0), pm.psi)
    return almcore.augmented_value(prob, q, ms)


def _projected_ascent(value_fn, grad_fn, z0, max_iter, tol_step, step_state,
                      counter=None, scale=None):
    """Monotone projected gradient ascent on the nonnegative orthant.

    Armijo backtracking (shrink 1/2, slope 1e-4) with a growing step memory;
    stops once an accepted move is tiny (relative to ``scale`` per
    coordinate) and the objective has stalled, so a cold (too small) step
    size cannot masquerade as convergence.
    """
    z = np.maximum(np.asarray(z0, dtype=float), 0.0)
    f = value_fn(z)
    step = step_state[0]
    inv_scale = 1.0 if scale is None else 1.0 / np.maximum(scale, 1e-300)
    for _ in range(max_iter):
        g = grad_fn(z)
        accepted = False
        for _ in range(60):
            z_try = np.maximum(z + step * g, 0.0)
            d = z_try - z
            norm = float(np.max(np.abs(d) * inv_scale)) if d.size else 0.0
            if norm == 0.0:
                break
            f_try = value_fn(z_try)
            if f_try >= f + 1e-4 * float(g @ d):
                accepted = True
                break
            step *= 0.5
        if counter is not None:
            counter[0] += 1
        if not accepted:
            break
        gain = f_try - f
        z, f = z_try, f_try
        step *= 1.5
        if norm <= tol_step and gain <= 1e-9 * (1.0 + abs(f)):
            break
    step_state[0] = step
    return z


@dataclass
class PowerTrace:
    """Per-round diagnostics of one power-control call."""

    sum_rate: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    step: list = field(default_factory=list)
    inner_steps: int = 0
    rounds: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)
    qos_residual: dict = field(default_factory=dict)
    multipliers: PowerMultipliers | None = None


def alm_power_control(inst: NetworkInstance, asg: Assignment,
                      p0: PowerAllocation, cfg: SolverConfig,
                      warm_multipliers: PowerMultipliers | None = None):
    """Optimize active-tuple powers for the fixed schedule ``asg``.

    Returns ``(PowerAllocation, PowerTrace)``.  The returned powers satisfy
    the budget and cross-tier caps exactly (a final snap projects onto them);
    an unattainable minimum rate is reported through ``qos_residual`` and the
    ``qos_infeasible`` flag rather than raised.  Min-rate rows are only
    carried for users whose target is attainable at all (zero-interference
    bound at the largest cap-respecting power); hopeless rows would otherwise
    drag the whole allocation through a divergent multiplier race.
    ``warm_multipliers`` (matched by user id) continue a previous call.
    """
    if asg.relaxed:
        raise ValueError("power control requires a binary assignment")
    act = _active_set(inst, asg)
    trace = PowerTrace()
    p_out = np.zeros_like(inst.gain)
    if act.n == 0:
        return PowerAllocation(p_out), trace

    c3_rows = qos_supportable_rows(act, cfg, inst.noise_power)
    prob = _power_problem(inst, act, cfg, c3_rows=c3_rows)
    q0 = np.array([max(p0.p[i, b, m, a], 0.0) for (i, b, m, a) in act.tuples])

    g0 = np.abs(prob.objective_grad(np.maximum(q0, 1e-6 * cfg.p_max)))
    step_state = [cfg.p_max / max(float(np.max(g0)), 1e-12)]
    counter = [0]

    def inner(z_warm, ms):
        return _projected_ascent(
            lambda z: almcore.augmented_value(prob, z, ms),
            lambda z: almcore.augmented_gradient(prob, z, ms),
            z_warm, cfg.inner_max_iter, 0.01 * cfg.eps_power,
            step_state, counter)

    n, M = act.n, inst.num_subchannels
    lam0 = np.zeros(n + M + len(c3_rows))
    psi = cfg.psi0
    if warm_multipliers is not None:
        pos = {int(u): j for j, u in enumerate(warm_multipliers.users)}
        for j, u in enumerate(act.users):
            k = pos.get(int(u))
            if k is not None:
                lam0[j] = warm_multipliers.lam[k]
        if warm_multipliers.theta.size == M:
            lam0[n:n + M] = warm_multipliers.theta
        for r, j in enumerate(c3_rows):
            k = pos.get(int(act.users[j]))
            if k is not None:
                lam0[n + M + r] = warm_multipliers.phi[k]
        # multipliers carry over; the penalty restarts its doubling schedule,
        # otherwise each multiplier update jolts the iterate by psi*residual
        # and the power-stall criterion can never fire

    # Multiplier loop; stop once the powers stall (max absolute change below
    # eps_power).  In early rounds the penalty is still weak and a stall is
    # not meaningful, so also require the hard caps to be essentially met --
    # unless the penalty has fully grown, in which case any leftover residual
    # is the stationary race of an unattainable min rate and we exit.
    n_hard = act.n + M
    ms = almcore.MultiplierState(lam0, np.zeros(0), psi)
    q = q0
    trace.converged = False
    for it in range(cfg.alm_max_iter):
        q_new = inner(q, ms)
        g = prob.ineq_values(q_new)
        viol_hard = float(np.max(g[:n_hard], initial=0.0))
        step = float(np.max(np.abs(q_new - q))) if q_new.size else 0.0
        trace.sum_rate.append(float(prob.objective(q_new)))
        trace.violation.append(almcore.max_violation(g, np.zeros(0)))
        trace.psi.append(ms.gamma)
        trace.step.append(step)
        trace.rounds = it + 1
        ms = almcore.update_multipliers(ms, g, np.zeros(0))
        q = q_new
        if it > 0 and step <= cfg.eps_power and \
                (viol_hard <= 100.0 * FEAS_TOL or ms.gamma >= cfg.psi_cap):
            trace.converged = True
            break
        ms.gamma = min(2.0 * ms.gamma, cfg.psi_cap)
    trace.inner_steps = counter[0]
    if not trace.converged:
        trace.flags.append("unconverged")
    trace.multipliers = _split_multipliers(ms, act, M, c3_rows)

    # exact feasibility snap for the budget and cross-tier caps
    q = np.minimum(np.maximum(q, 0.0), cfg.p_max)
    for m in np.unique(act.chans):
        on_m = act.chans == m
        load = float(q[on_m] @ act.g0[on_m])
        if load > cfg.i_th and load > 0.0:
            q[on_m] *= cfg.i_th / load

    R, _, _ = _rates(act, q, inst.noise_power)
    if cfg.r_min > 0:
        for j in range(act.n):
            resid = cfg.r_min - R[j]
            if resid > QOS_TOL * max(1.0, cfg.r_min):
                trace.qos_residual[int(act.users[j])] = float(resid)
        if trace.qos_residual:
            trace.flags.append("qos_infeasible")

    for j, (i, b, m, a) in enumerate(act.tuples):
        p_out[i, b, m, a] = q[j]
    return PowerAllocation(p_out), trace
