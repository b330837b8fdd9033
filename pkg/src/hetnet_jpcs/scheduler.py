"""Joint user-association / sub-channel / antenna-selection subproblem.

For a frozen power profile the schedule is found by relaxing the binary
indicators to [0, 1], moving the binariness conditions ``z - z^2 <= 0`` into
the objective with weights ``mu1``/``mu2``, splitting the resulting bilinear
objective into a difference of convex quadratics via
``x*s = (x+s)^2/2 - (x^2+s^2)/2``, and maximizing a concave minorant that
touches the current iterate (minorize-maximize).  Each minorant is maximized
with Frank-Wolfe steps whose linear subproblem decomposes into a maximum
weight user-to-(BS, sub-channel) matching plus per-(user, sub-channel)
antenna argmax; the cross-tier interference budget and the minimum-rate
requirement (convexified the same way) are handled by augmented-Lagrangian
penalties around the minorant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import almcore
from .model import (Assignment, NetworkInstance, PowerAllocation, SolverConfig,
                    active_tuples, per_user_power, scheduled_users)

MM_TOL = 1e-4          # surrogate objective change that counts as converged
FW_GAP_TOL = 1e-5
FEAS_TOL = 1e-6        # normalized constraint violation accepted as feasible
INFEAS_TOL = 1e-3      # persistent violation above this is reported infeasible


class SurrogateInfeasibleError(RuntimeError):
    """The convexified constraint set admits no acceptable point."""

    def __init__(self, constraint: str, violation: float):
        super().__init__(f"surrogate constraints infeasible: {constraint} "
                         f"violated by {violation:.3e}")
        self.constraint = constraint
        self.violation = violation


@dataclass
class RateCoefficients:
    """Per-tuple rates with the previous iterate's interference frozen."""

    rbar: np.ndarray    # (I, num_bs, M, A); macro column is zero


def frozen_power_levels(prev_asg: Assignment, prev_p: PowerAllocation,
                        fallback_power: float = 0.0) -> np.ndarray:
    """Per-user power level used while scheduling.

    Scheduled users keep their exact current power (possibly zero, so the
    expansion point stays consistent with the true budgets); only idle users
    get the fallback level that lets them re-enter the schedule.
    """
    q = per_user_power(prev_asg, prev_p)
    return np.where(scheduled_users(prev_asg), q, fallback_power)


def rate_coefficients(inst: NetworkInstance, prev_asg: Assignment,
                      prev_p: PowerAllocation,
                      fallback_power: float = 0.0) -> RateCoefficients:
    """Candidate-tuple rates at the previous iterate.

    The interference field is generated by the previous schedule and powers;
    evaluating candidate (i, b, m, a) excludes user i's own contribution, so
    entries on previously active tuples reproduce the exact current rates.
    """
    I, nb, M, A = inst.gain.shape
    q = frozen_power_levels(prev_asg, prev_p, fallback_power)
    field_bm = np.zeros((nb, M))
    own = np.zeros((I, nb, M))
    for (l, bl, ml, al) in active_tuples(prev_asg):
        v = q[l] * inst.gain[l, :, ml, al].copy()
        v[bl] = 0.0
        field_bm[:, ml] += v
        own[l, :, ml] += v
    excl = field_bm[None, :, :] - own                      # (I, nb, M)
    sinr = (q[:, None, None, None] * inst.gain) / (inst.noise_power + excl[:, :, :, None])
    rbar = np.log2(1.0 + sinr)
    rbar[:, 0, :, :] = 0.0
    return RateCoefficients(rbar)


def _dims_from_rbar(rbar):
    I, nb, M, A = rbar.shape
    return I, nb - 1, M, A


def pack(x: np.ndarray, s_sc: np.ndarray) -> np.ndarray:
    return np.concatenate([x.ravel(), s_sc.ravel()])


def unpack(z: np.ndarray, dims):
    I, B, M, A = dims
    nx = I * M * A
    return z[:nx].reshape(I, M, A), z[nx:].reshape(I, B, M)


def pack_assignment(asg: Assignment) -> np.ndarray:
    """Flatten an assignment; antenna rows summing to zero become antenna 0."""
    x = asg.x.copy()
    idle = x.sum(axis=2) <= 0.0
    x[idle, 0] = 1.0
    return pack(x, asg.s[:, 1:, :].copy())


def penalized_objective(z: np.ndarray, rbar: np.ndarray,
                        mu1: float, mu2: float) -> float:
    """Relaxed scheduling objective with binariness penalties.

    ``sum(rbar * x * s) - mu1 * sum(s - s^2) - mu2 * sum(x - x^2)``.
    """
    I, B, M, A = _dims_from_rbar(rbar)
    x, s = unpack(z, (I, B, M, A))
    r = rbar[:, 1:, :, :]
    val = float(np.einsum("ibma,ima,ibm->", r, x, s))
    val -= mu1 * float(np.sum(s - s * s))
    val -= mu2 * float(np.sum(x - x * x))
    return val


@dataclass
class SurrogateProblem:
    """Concave quadratic minorant of the penalized objective at ``z_prev``.

    The objective is ``const + c @ z - 0.5 * z @ (d * z)`` with ``d >= 0``;
    ``constraints`` hold the convexified resource budgets as
    :class:`~hetnet_jpcs.almcore.ConstraintBlock` rows (``<= 0``).
    """

    dims: tuple                  # (I, B_sc, M, A)
    c: np.ndarray
    d: np.ndarray
    const: float
    z_prev: np.ndarray
    constraints: list = field(default_factory=list)
    bulk: bool = False
    allowed: np.ndarray | None = None    # (I, B_sc) candidate-cell mask

    def __post_init__(self):
        if np.any(self.d < -1e-12):
            raise ValueError("surrogate curvature must be negative semidefinite")
        self.d = np.maximum(self.d, 0.0)

    def objective_value(self, z):
        return float(self.const + self.c @ z - 0.5 * z @ (self.d * z))

    def objective_grad(self, z):
        return self.c - self.d * z

    def curvature_along(self, direction):
        return float(direction @ (self.d * direction))

    def lmo(self, grad):
        """Best vertex of the C5-C7 box polytope for a linear objective."""
        I, B, M, A = self.dims
        gx, gs = unpack(grad, self.dims)
        x = np.zeros((I, M, A))
        if I > 0:
            if self.bulk:
                best = np.argmax(gx.sum(axis=1), axis=1)           # (I,)
                x[np.arange(I)[:, None], np.arange(M)[None, :], best[:, None]] = 1.0
            else:
                best = np.argmax(gx, axis=2)                        # (I, M)
                ii, mm = np.meshgrid(np.arange(I), np.arange(M), indexing="ij")
                x[ii, mm, best] = 1.0
        s = np.zeros((I, B, M))
        if I > 0 and B * M > 0:
            w = gs.reshape(I, B * M).copy()
            if self.allowed is not None:
                w[~np.repeat(self.allowed, M, axis=1)] = -np.inf
            rows, cols = linear_sum_assignment(np.maximum(w, 0.0), maximize=True)
            for i, j in zip(rows, cols):
                if w[i, j] > 0.0:
                    s[i, j // M, j % M] = 1.0
        return pack(x, s)


def build_surrogate(z_prev: np.ndarray, rbar: np.ndarray, mu1: float, mu2: float,
                    inst: NetworkInstance, prev_p: PowerAllocation | None,
                    cfg: SolverConfig, power_levels: np.ndarray | None = None,
                    c3_users=(), bulk: bool = False) -> SurrogateProblem:
    """Linearize the convex block of the DC split at ``z_prev``.

    With ``u = sum(rbar/2 (x+s)^2) + mu1 |s|^2 + mu2 |x|^2`` and
    ``v = sum(rbar/2 (x^2+s^2)) + mu1 1's + mu2 1'x`` (both convex, objective
    ``u - v``), the minorant is ``u(z_prev) + grad u(z_prev)'(z - z_prev) - v(z)``.
    The cross-tier budget and the minimum-rate requirement at the frozen
    powers are convexified with the same square expansion, the concave
    remainder linearized at ``z_prev`` (an inner approximation).
    """
    I, nb, M, A = rbar.shape
    dims = (I, nb - 1, M, A)
    r = rbar[:, 1:, :, :]
    xp, sp = unpack(np.asarray(z_prev, dtype=float), dims)

    rx = r.sum(axis=1)                       # (I, M, A)
    rs = r.sum(axis=3)                       # (I, B, M)
    cross_x = np.einsum("ibma,ibm->ima", r, sp)
    cross_s = np.einsum("ibma,ima->ibm", r, xp)

    gu_x = rx * xp + cross_x + 2.0 * mu2 * xp
    gu_s = rs * sp + cross_s + 2.0 * mu1 * sp
    gu = pack(gu_x, gu_s)

    u_prev = 0.5 * float(np.einsum("ibma,ibma->", r,
                                   (xp[:, None, :, :] + sp[:, :, :, None]) ** 2))
    u_prev += mu1 * float(np.sum(sp * sp)) + mu2 * float(np.sum(xp * xp))

    zp = pack(xp, sp)
    c = gu - pack(np.full((I, M, A), mu2), np.full((I, nb - 1, M), mu1))
    d = pack(rx, rs)
    const = u_prev - float(gu @ zp)

    constraints = []
    if power_levels is None:
        power_levels = np.zeros(I) if prev_p is None else \
            np.minimum(prev_p.p.sum(axis=(1, 2, 3)), cfg.p_max)
    q = np.asarray(power_levels, dtype=float)

    if cfg.i_th >= 0 and I > 0:
        constraints.append(_cross_tier_block(inst, dims, q, xp, sp, cfg.i_th))
    c3_users = tuple(c3_users)
    if c3_users and cfg.r_min > 0:
        constraints.append(_min_rate_block(r, dims, xp, sp, cfg.r_min, c3_users))

    allowed = np.zeros((I, nb - 1), dtype=bool)
    for i in range(I):
        for b in inst.home_cell[i]:
            allowed[i, b - 1] = True

    return SurrogateProblem(dims, c, d, const, zp.copy(), constraints, bulk, allowed)


def _cross_tier_block(inst, dims, q, xp, sp, i_th):
    """Convexified per-sub-channel cross-tier budget, normalized by the cap."""
    I, B, M, A = dims
    scale = i_th if i_th > 0 else 1.0
    w = (q[:, None, None] * inst.gain[:, 0, :, :]) / scale      # (I, M, A)
    rhs = 1.0 if i_th > 0 else 0.0
    nx = I * M * A

    def fun(z):
        x, s = unpack(z, dims)
        sq = 0.5 * (x[:, None, :, :] + s[:, :, :, None]) ** 2          # (I,B,M,A)
        lin = (xp * x - 0.5 * xp * xp)[:, None, :, :] \
            + (sp * s - 0.5 * sp * sp)[:, :, :, None]
        return np.einsum("ima,ibma->m", w, sq - lin) - rhs

    def jac(z):
        x, s = unpack(z, dims)
        gx = w * (B * (x - xp) + s.sum(axis=1)[:, :, None])            # (I,M,A)
        gs = np.einsum("ima,ibma->ibm", w,
                       x[:, None, :, :] + s[:, :, :, None] - sp[:, :, :, None])
        J = np.zeros((M, z.size))
        jx = J[:, :nx].reshape(M, I, M, A)
        jx[np.arange(M), :, np.arange(M), :] = gx.transpose(1, 0, 2)
        js = J[:, nx:].reshape(M, I, B, M)
        js[np.arange(M), :, :, np.arange(M)] = gs.transpose(2, 0, 1)
        return J

    def curv_along(d):
        dx, ds = unpack(d, dims)
        sq = (dx[:, None, :, :] + ds[:, :, :, None]) ** 2
        return np.einsum("ima,ibma->m", w, sq)

    labels = tuple(f"C2[m={m}]" for m in range(M))
    return almcore.ConstraintBlock(fun, jac, labels, curv_along)


def _min_rate_block(r, dims, xp, sp, r_min, users):
    """Convexified minimum-rate constraints for the given users."""
    I, B, M, A = dims
    rho = max(r_min, 1.0)
    users = np.asarray(tuple(users), dtype=int)
    U = len(users)
    ru = r[users]                                        # (U, B, M, A)
    nx = I * M * A

    def fun(z):
        x, s = unpack(z, dims)
        X, S = x[users], s[users]                        # (U,M,A), (U,B,M)
        Xp, Sp = xp[users], sp[users]
        quad = 0.5 * (X[:, None, :, :] ** 2 + (S ** 2)[:, :, :, None])
        tang = Xp[:, None, :, :] + Sp[:, :, :, None]
        lin = tang * (X[:, None, :, :] + S[:, :, :, None]) - 0.5 * tang ** 2
        return (r_min + np.einsum("ubma,ubma->u", ru, quad - lin)) / rho

    def jac(z):
        x, s = unpack(z, dims)
        X, S = x[users], s[users]
        Xp, Sp = xp[users], sp[users]
        tang = Xp[:, None, :, :] + Sp[:, :, :, None]
        gx = np.einsum("ubma->uma", ru * (X[:, None, :, :] - tang)) / rho
        gs = np.einsum("ubma->ubm", ru * (S[:, :, :, None] - tang)) / rho
        J = np.zeros((U, z.size))
        jx = J[:, :nx].reshape(U, I, M, A)
        jx[np.arange(U), users] = gx
        js = J[:, nx:].reshape(U, I, B, M)
        js[np.arange(U), users] = gs
        return J

    def curv_along(d):
        dx, ds = unpack(d, dims)
        return (np.einsum("ubma,uma->u", ru, dx[users] ** 2)
                + np.einsum("ubma,ubm->u", ru, ds[users] ** 2)) / rho

    labels = tuple(f"C3[user={i}]" for i in users)
    return almcore.ConstraintBlock(fun, jac, labels, curv_along)


def _golden_step(phi, lo_val, hi_val, iters=28):
    """Maximize a concave 1-d function on [0, 1]; returns (step, value)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, 1.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = phi(c), phi(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = phi(d)
    cands = [(0.0, lo_val), (1.0, hi_val), (c, fc), (d, fd)]
    return max(cands, key=lambda t: t[1])


@dataclass
class FwResult:
    z: np.ndarray
    gap: float
    iterations: int


def _frank_wolfe(sp: SurrogateProblem, value_fn, grad_fn, z0,
                 max_iter, gap_tol, hinge_free_fn=None) -> FwResult:
    z = np.asarray(z0, dtype=float).copy()
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = grad_fn(z)
        v = sp.lmo(g)
        d = v - z
        gap = float(g @ d)
        if gap <= gap_tol:
            break
        if hinge_free_fn is not None and hinge_free_fn(z) and hinge_free_fn(v):
            # hinges inactive on the whole segment: exact quadratic step
            curv = sp.curvature_along(d)
            step = 1.0 if curv <= 0 else min(1.0, gap / curv)
            if step <= 0:
                break
            z = z + step * d
            continue
        f0 = value_fn(z)
        step, f_best = _golden_step(lambda t: value_fn(z + t * d), f0, value_fn(v))
        if step <= 0 or f_best <= f0:
            break
        z = z + step * d
    return FwResult(z, gap, it)


@dataclass
class SurrogateSolveInfo:
    fw_iterations: int = 0
    fw_gap: float = math.inf
    alm_rounds: int = 0
    max_violation: float = 0.0
    converged: bool = True
    multipliers: almcore.MultiplierState | None = None


def _frank_wolfe_exact(sp: SurrogateProblem, blocks, lam, psi, z0,
                       max_iter, gap_tol) -> FwResult:
    """Frank-Wolfe on the hinge-augmented surrogate with exact line search.

    All constraint rows are quadratic, so the directional derivative of the
    augmented objective is piecewise quadratic and nonincreasing in the step;
    its root is found by bisection on scalars instead of sampled values.
    """
    z = np.asarray(z0, dtype=float).copy()
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        c0 = np.concatenate([b.fun(z) for b in blocks])
        jacs = [b.jac(z) for b in blocks]
        w = np.maximum(0.0, lam + psi * c0)
        grad = sp.objective_grad(z)
        off = 0
        for J in jacs:
            k = J.shape[0]
            if np.any(w[off:off + k] > 0):
                grad = grad - J.T @ w[off:off + k]
            off += k
        v = sp.lmo(grad)
        d = v - z
        gap = float(grad @ d)
        if gap <= gap_tol:
            break
        sg0 = float(sp.objective_grad(z) @ d)
        b0 = sp.curvature_along(d)
        c1 = np.concatenate([J @ d for J in jacs])
        c2 = np.concatenate([b.curv_along(d) for b in blocks])

        def dphi(t):
            hinge = np.maximum(0.0, lam + psi * (c0 + c1 * t + 0.5 * c2 * t * t))
            return sg0 - t * b0 - float(hinge @ (c1 + c2 * t))

        if dphi(1.0) >= 0.0:
            step = 1.0
        else:
            lo, hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if dphi(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            step = lo
        if step <= 0.0:
            break
        z = z + step * d
    return FwResult(z, gap, it)


def _repair_start(z, dims):
    """Pull an arbitrary box point into the C5-C7 polytope (FW needs that)."""
    x, s = unpack(np.clip(np.asarray(z, dtype=float), 0.0, 1.0), dims)
    row = x.sum(axis=2, keepdims=True)
    x = np.where(row > 0, x / np.maximum(row, 1e-300), 0.0)
    idle = x.sum(axis=2) <= 0.0
    x[idle, 0] = 1.0
    user_load = s.sum(axis=(1, 2), keepdims=True)
    s = s / np.maximum(user_load, 1.0)
    slot_load = s.sum(axis=0, keepdims=True)
    s = s / np.maximum(slot_load, 1.0)
    return pack(x, s)


def solve_surrogate_detailed(sp: SurrogateProblem, warm_z=None, ms0=None,
                             gamma0: float = 1.0, gamma_cap: float = 2.0 ** 20,
                             alm_max_iter: int = 8, fw_max_iter: int = 200,
                             fw_gap_tol: float = FW_GAP_TOL):
    z0 = sp.z_prev if warm_z is None else np.asarray(warm_z, dtype=float)
    z0 = _repair_start(z0, sp.dims)
    info = SurrogateSolveInfo()

    if not sp.constraints:
        res = _frank_wolfe(sp, sp.objective_value, sp.objective_grad, z0,
                           fw_max_iter, fw_gap_tol,
                           hinge_free_fn=lambda z: True)
        info.fw_iterations, info.fw_gap = res.iterations, res.gap
        info.converged = res.gap <= fw_gap_tol
        return res.z, info

    prob = almcore.ConstrainedProblem(sp.objective_value, sp.objective_grad,
                                      inequalities=sp.constraints)
    exact = all(b.curv_along is not None for b in sp.constraints)

    def hinge_free(ms):
        def check(z):
            g = prob.ineq_values(z)
            return bool(np.all(ms.lam + ms.gamma * g <= 0.0))
        return check

    fw_total = [0]
    last_gap = [math.inf]
    best_feasible = [None, -math.inf]     # (z, surrogate objective)

    def inner(z_warm, ms):
        if exact:
            res = _frank_wolfe_exact(sp, sp.constraints, ms.lam, ms.gamma,
                                     z_warm, fw_max_iter, fw_gap_tol)
        else:
            res = _frank_wolfe(sp,
                               lambda z: almcore.augmented_value(prob, z, ms),
                               lambda z: almcore.augmented_gradient(prob, z, ms),
                               z_warm, fw_max_iter, fw_gap_tol,
                               hinge_free_fn=hinge_free(ms))
        fw_total[0] += res.iterations
        last_gap[0] = res.gap
        g = prob.ineq_values(res.z)
        if (not g.size or float(np.max(g)) <= FEAS_TOL):
            val = sp.objective_value(res.z)
            if val > best_feasible[1]:
                best_feasible[0], best_feasible[1] = res.z.copy(), val
        return res.z

    g0 = prob.ineq_values(z0)
    if not g0.size or float(np.max(g0)) <= FEAS_TOL:
        best_feasible[0], best_feasible[1] = z0.copy(), sp.objective_value(z0)
    if ms0 is not None and ms0.lam.size != g0.size:
        ms0 = None
    z, ms, trace = almcore.alm_solve(prob, inner, z0, gamma0=gamma0,
                                     gamma_growth=2.0, gamma_cap=gamma_cap,
                                     tol_feas=FEAS_TOL, tol_step=1e-3,
                                     max_iter=alm_max_iter,
                                     ms0=ms0)
    info.fw_iterations = fw_total[0]
    info.fw_gap = last_gap[0]
    info.alm_rounds = trace.iterations
    g = prob.ineq_values(z)
    info.max_violation = float(np.max(g)) if g.size else 0.0
    info.converged = trace.converged
    info.multipliers = ms
    if info.max_violation > 10.0 * FEAS_TOL and best_feasible[0] is not None:
        # the multiplier loop wandered; keep the best feasible point seen
        z = best_feasible[0]
        info.max_violation = float(np.max(prob.ineq_values(z)))
        info.converged = False
    if info.max_violation > INFEAS_TOL:
        labels = prob.ineq_labels()
        worst = int(np.argmax(prob.ineq_values(z)))
        raise SurrogateInfeasibleError(labels[worst], info.max_violation)
    return z, info


def solve_surrogate(sp: SurrogateProblem, **kwargs) -> np.ndarray:
    """Approximate maximizer of the surrogate over the feasible polytope."""
    z, _ = solve_surrogate_detailed(sp, **kwargs)
    return z


def binariness_gap(z: np.ndarray) -> float:
    """Largest distance of any entry from {0, 1}."""
    if z.size == 0:
        return 0.0
    return float(np.max(np.abs(z - np.round(z))))


def round_assignment(z: np.ndarray, inst: NetworkInstance,
                     prev_p: PowerAllocation | None, cfg: SolverConfig,
                     rbar: np.ndarray | None = None,
                     power_levels: np.ndarray | None = None,
                     bulk: bool = False) -> Assignment:
    """Threshold a relaxed point at 0.5 and repair to a feasible schedule.

    The repair walks candidates in descending rate-coefficient order,
    honouring the exclusivity rules, then deactivates tuples that would break
    the power budget or (per sub-channel) the cross-tier budget at the
    frozen powers.
    """
    I, nb, M, A = inst.gain.shape
    dims = (I, nb - 1, M, A)
    x_rel, s_rel = unpack(np.asarray(z, dtype=float), dims)
    if power_levels is None:
        power_levels = np.zeros(I) if prev_p is None else \
            np.minimum(prev_p.p.sum(axis=(1, 2, 3)), cfg.p_max)
    q = np.asarray(power_levels, dtype=float)
    if rbar is None:
        weight = inst.gain[:, 1:, :, :]
    else:
        weight = rbar[:, 1:, :, :]

    if bulk and I > 0:
        a_user = np.argmax(x_rel.sum(axis=1), axis=1)
        a_star = np.repeat(a_user[:, None], M, axis=1)
    else:
        a_star = np.argmax(x_rel, axis=2) if I > 0 else np.zeros((0, M), dtype=int)

    cand = []
    for i, b, m in zip(*np.nonzero(s_rel >= 0.5 - 1e-12)):
        if (b + 1) in inst.home_cell[i]:
            cand.append((-weight[i, b, m, a_star[i, m]], i, b, m))
    cand.sort()

    user_used = np.zeros(I, dtype=bool)
    slot_used = np.zeros((nb - 1, M), dtype=bool)
    chosen = []
    for _, i, b, m in cand:
        if user_used[i] or slot_used[b, m]:
            continue
        if q[i] > cfg.p_max * (1.0 + 1e-12):
            continue                                   # would break the budget
        user_used[i] = True
        slot_used[b, m] = True
        chosen.append((i, b, m))

    # per-sub-channel cross-tier repair: drop weakest tuples until the cap holds
    for m in range(M):
        on_m = [(i, b) for (i, b, mm) in chosen if mm == m]
        while on_m:
            load = sum(q[i] * inst.gain[i, 0, m, a_star[i, m]] for i, _ in on_m)
            if load <= cfg.i_th * (1.0 + 1e-12):
                break
            drop = min(on_m, key=lambda ib: (weight[ib[0], ib[1], m, a_star[ib[0], m]], ib))
            on_m.remove(drop)
            chosen.remove((drop[0], drop[1], m))

    s = np.zeros((I, nb, M))
    x = np.zeros((I, M, A))
    for (i, b, m) in chosen:
        s[i, b + 1, m] = 1.0
    for i in range(I):
        for m in range(M):
            x[i, m, a_star[i, m]] = 1.0
    return Assignment(s, x)


@dataclass
class ScheduleInfo:
    mm_iterations: int = 0
    fw_iterations: int = 0
    alm_rounds: int = 0
    binariness_gap: float = 0.0
    penalized_trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    mu: float = 0.0


def fractional_start(inst: NetworkInstance, bulk: bool = False,
                     power_levels: np.ndarray | None = None,
                     i_th: float = math.inf) -> np.ndarray:
    """Interior point of the relaxed polytope: antennas spread uniformly,
    each user's unit of schedule mass spread over its candidate slots, scaled
    so that no slot is oversubscribed and (at the given frozen powers) no
    sub-channel exceeds the cross-tier cap."""
    I, nb, M, A = inst.gain.shape
    B = nb - 1
    x = np.full((I, M, A), 1.0 / A)
    s = np.zeros((I, B, M))
    for i in range(I):
        cells = [b - 1 for b in inst.home_cell[i]]
        if cells and M > 0:
            s[i, cells, :] = 1.0 / (len(cells) * M)
    load = s.sum(axis=0)                       # (B, M)
    over = load.max() if load.size else 0.0
    if over > 1.0:
        s /= over
    if power_levels is not None and math.isfinite(i_th) and I > 0:
        # bilinear cross-tier load at this start, per sub-channel
        w = power_levels[:, None, None] * inst.gain[:, 0, :, :]     # (I, M, A)
        cross = np.einsum("ima,ima,ibm->m", w, x, s)
        worst = float(cross.max(initial=0.0))
        if worst > i_th:
            s *= 0.999 * i_th / worst if i_th > 0 else 0.0
    return pack(x, s)


def _frozen_value(asg: Assignment, rbar: np.ndarray) -> float:
    """Scheduling objective of a binary assignment at the frozen powers."""
    return float(np.einsum("ibm,ima,ibma->", asg.s[:, 1:, :], asg.x,
                           rbar[:, 1:, :, :]))


def _mm_loop(inst, rbar, mu1, mu2, z0, q, cfg, c3_users, bulk, info,
             record_trace=False, max_rounds=None, fw_max_iter=None):
    """Minorize-maximize at fixed penalty weights; returns the final iterate."""
    zp = np.asarray(z0, dtype=float).copy()
    obj_prev = penalized_objective(zp, rbar, mu1, mu2)
    if record_trace:
        info.penalized_trace.append(obj_prev)
    c3_users = list(c3_users)
    ms_warm = None
    rounds = cfg.t_j_max if max_rounds is None else min(max_rounds, cfg.t_j_max)
    fw_cap = cfg.inner_max_iter if fw_max_iter is None else fw_max_iter
    for _ in range(rounds):
        sp = build_surrogate(zp, rbar, mu1, mu2, inst, None, cfg,
                             power_levels=q, c3_users=c3_users, bulk=bulk)
        try:
            z_new, sinfo = solve_surrogate_detailed(
                sp, ms0=ms_warm, gamma0=cfg.psi0, gamma_cap=cfg.psi_cap,
                alm_max_iter=5, fw_max_iter=fw_cap)
        except SurrogateInfeasibleError:
            if c3_users:
                c3_users = []
                if "c3_relaxed" not in info.flags:
                    info.flags.append("c3_relaxed")
                ms_warm = None
                continue
            info.flags.append("schedule_constraint_residual")
            break
        info.mm_iterations += 1
        info.fw_iterations += sinfo.fw_iterations
        info.alm_rounds += sinfo.alm_rounds
        if sinfo.max_violation > 10.0 * FEAS_TOL:
            if c3_users:
                c3_users = []
                if "c3_relaxed" not in info.flags:
                    info.flags.append("c3_relaxed")
                ms_warm = None
                continue
            info.flags.append("schedule_constraint_residual")
            break
        obj_new = penalized_objective(z_new, rbar, mu1, mu2)
        if obj_new < obj_prev - 1e-12:
            info.flags.append("mm_guard_stop")
            break
        delta = sp.objective_value(z_new) - sp.objective_value(zp)
        zp = z_new
        obj_prev = obj_new
        if record_trace:
            info.penalized_trace.append(obj_new)
        ms_warm = sinfo.multipliers
        if delta <= MM_TOL * (1.0 + abs(obj_new)):
            break
    return zp


def mm_schedule_detailed(inst: NetworkInstance, prev_asg: Assignment,
                         prev_p: PowerAllocation, cfg: SolverConfig,
                         bulk: bool = False, fallback_power: float = 0.0):
    """Schedule at the frozen powers; returns (assignment, info).

    Runs the minorize-maximize loop as a two-stage continuation: first with
    vanishing binariness weights from an interior fractional point (so the
    rate coefficients, not the penalty, shape the relaxed solution), then
    with the full weights, which polarize the entries to {0, 1}.  Starting
    the penalized stage directly at the previous binary point would be a
    fixed point of the minorant (each penalty weight acts as a switching
    hysteresis), silently freezing the schedule.  The rounded result is kept
    only if it beats the previous schedule at the frozen powers.
    """
    rc = rate_coefficients(inst, prev_asg, prev_p, fallback_power)
    rbar = rc.rbar
    q = frozen_power_levels(prev_asg, prev_p, fallback_power)
    q = np.minimum(q, cfg.p_max)
    rmax = float(rbar.max()) if rbar.size else 0.0
    mu1 = cfg.mu1 if cfg.mu1 is not None else (10.0 * rmax if rmax > 0 else 1.0)
    mu2 = cfg.mu2 if cfg.mu2 is not None else mu1
    info = ScheduleInfo(mu=mu1)

    # stage 1: shape the relaxation (tiny weights keep the stage-2 objective
    # comparable but exert no polarizing pressure); rough accuracy suffices
    mu_lo = 1e-9 * max(mu1, mu2, 1.0)
    z0 = fractional_start(inst, bulk, power_levels=q, i_th=cfg.i_th)
    z1 = _mm_loop(inst, rbar, mu_lo, mu_lo, z0, q,
                  cfg, (), bulk, info, max_rounds=2, fw_max_iter=40)

    # stage 2: ramp the weights up to the configured values; jumping straight
    # to a large weight from a point with split schedule mass (every entry
    # below 1/2) would pull whole users to zero instead of consolidating them
    c3_users = []
    if cfg.r_min > 0:
        met = _per_user_relaxed_rate(z1, rbar)
        for (i, b, m, a) in active_tuples(prev_asg):
            if rbar[i, b, m, a] >= cfg.r_min - 1e-9 and met[i] >= cfg.r_min - 1e-9:
                c3_users.append(i)
    z2 = z1
    scale = rmax if rmax > 0 else max(mu1, mu2)
    ramp = []
    for w in (0.5 * scale, 2.0 * scale):
        pair = (min(mu1, w), min(mu2, w))
        if pair not in ramp and pair != (mu1, mu2):
            ramp.append(pair)
    ramp.append((mu1, mu2))        # ramp anchored to the coefficient scale:
    for w1, w2 in ramp:            # saturated weights share one consolidation
        final = (w1, w2) == (mu1, mu2)
        z2 = _mm_loop(inst, rbar, w1, w2, z2, q, cfg,
                      c3_users, bulk, info, record_trace=final,
                      max_rounds=5 if final else 2, fw_max_iter=50)

    asg = round_assignment(z2, inst, prev_p, cfg, rbar=rbar,
                           power_levels=q, bulk=bulk)
    # Half-valued entries are stationary for the minorant (their penalty
    # coefficient vanishes), so the loop can stall at a fractional spread
    # point.  The rounded schedule is feasible; adopting it when it scores a
    # higher penalized objective is a plain ascent step, and that is exactly
    # what happens once the weights pass the binariness threshold.
    z3 = pack_assignment(asg)
    if penalized_objective(z3, rbar, mu1, mu2) >= \
            penalized_objective(z2, rbar, mu1, mu2) - 1e-12:
        z2 = z3
        if info.penalized_trace:
            info.penalized_trace.append(penalized_objective(z3, rbar, mu1, mu2))
    info.binariness_gap = binariness_gap(z2)
    if _frozen_value(asg, rbar) < _frozen_value(prev_asg, rbar) - 1e-12:
        asg = prev_asg.copy()
        info.flags.append("schedule_kept_previous")
    return asg, info


def _per_user_relaxed_rate(z, rbar):
    I, nb, M, A = rbar.shape
    x, s = unpack(z, (I, nb - 1, M, A))
    return np.einsum("ibma,ima,ibm->i", rbar[:, 1:, :, :], x, s)


def mm_schedule(inst: NetworkInstance, prev_asg: Assignment,
                prev_p: PowerAllocation, cfg: SolverConfig,
                bulk: bool = False, fallback_power: float = 0.0) -> Assignment:
    """Binary schedule for the frozen powers of the previous iterate."""
    asg, _ = mm_schedule_detailed(inst, prev_asg, prev_p, cfg,
                                  bulk=bulk, fallback_power=fallback_power)
    return asg
