"""Generic augmented-Lagrangian engine for maximization problems.

Inequalities use the ``g_j(z) <= 0`` convention.  Slack variables are
eliminated analytically, which turns each inequality into the hinge term
``(1 / 2 gamma) * ([lambda_j + gamma g_j(z)]_+^2 - lambda_j^2)`` subtracted
from the objective; equalities contribute ``eta_i h_i + (gamma/2) h_i^2``.
Multiplier iterations are ``lambda <- [lambda + gamma g]_+`` and
``eta <- eta + gamma h``, with geometric growth of ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class ConstraintBlock:
    """A vector-valued constraint with values and a dense Jacobian.

    ``fun(z)`` returns shape ``(k,)``; ``jac(z)`` returns ``(k, n)``.
    ``labels`` names the individual rows for diagnostics.  For rows that are
    quadratic in ``z``, ``curv_along(d)`` may supply the constant directional
    curvatures ``d' H_j d`` so line searches can be exact.
    """

    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    labels: tuple = ()
    curv_along: Callable[[np.ndarray], np.ndarray] | None = None

    def size(self, z):
        return np.atleast_1d(np.asarray(self.fun(z), dtype=float)).shape[0]


def scalar_block(fun, grad, label="g"):
    """Wrap scalar callables into a 1-row ConstraintBlock."""
    return ConstraintBlock(
        fun=lambda z: np.array([fun(z)], dtype=float),
        jac=lambda z: np.asarray(grad(z), dtype=float).reshape(1, -1),
        labels=(label,),
    )


@dataclass
class ConstrainedProblem:
    """Maximize ``objective`` subject to inequality/equality blocks on a box."""

    objective: Callable[[np.ndarray], float]
    objective_grad: Callable[[np.ndarray], np.ndarray]
    inequalities: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    lower: np.ndarray | None = None

    def ineq_values(self, z):
        if not self.inequalities:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(np.asarray(b.fun(z), dtype=float))
                               for b in self.inequalities])

    def eq_values(self, z):
        if not self.equalities:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(np.asarray(b.fun(z), dtype=float))
                               for b in self.equalities])

    def ineq_labels(self):
        labels = []
        for k, b in enumerate(self.inequalities):
            labels.extend(b.labels if b.labels else (f"g{k}",))
        return labels


@dataclass
class MultiplierState:
    """Multipliers lambda >= 0 (inequalities), eta (equalities), penalty gamma > 0."""

    lam: np.ndarray
    eta: np.ndarray
    gamma: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if np.any(self.lam < 0):
            raise ValueError("inequality multipliers must be >= 0")
        if self.gamma <= 0:
            raise ValueError("penalty must be > 0")


def init_multipliers(prob: ConstrainedProblem, z0, gamma: float) -> MultiplierState:
    n_ineq = int(sum(b.size(z0) for b in prob.inequalities))
    n_eq = int(sum(b.size(z0) for b in prob.equalities))
    return MultiplierState(np.zeros(n_ineq), np.zeros(n_eq), gamma)


def augmented_value(prob: ConstrainedProblem, z: np.ndarray, ms: MultiplierState) -> float:
    """Augmented objective at ``z`` (to be maximized)."""
    val = float(prob.objective(z))
    h = prob.eq_values(z)
    if h.size:
        val -= float(ms.eta @ h + 0.5 * ms.gamma * (h @ h))
    g = prob.ineq_values(z)
    if g.size:
        hinge = np.maximum(0.0, ms.lam + ms.gamma * g)
        val -= float((hinge @ hinge - ms.lam @ ms.lam) / (2.0 * ms.gamma))
    return val


def augmented_gradient(prob: ConstrainedProblem, z: np.ndarray, ms: MultiplierState) -> np.ndarray:
    """Gradient of the augmented objective; hinge derivative is 0 at the kink."""
    grad = np.asarray(prob.objective_grad(z), dtype=float).copy()
    if prob.equalities:
        off = 0
        for b in prob.equalities:
            h = np.atleast_1d(np.asarray(b.fun(z), dtype=float))
            w = ms.eta[off:off + h.size] + ms.gamma * h
            grad -= np.asarray(b.jac(z), dtype=float).T @ w
            off += h.size
    if prob.inequalities:
        off = 0
        for b in prob.inequalities:
            g = np.atleast_1d(np.asarray(b.fun(z), dtype=float))
            w = np.maximum(0.0, ms.lam[off:off + g.size] + ms.gamma * g)
            if np.any(w > 0):
                grad -= np.asarray(b.jac(z), dtype=float).T @ w
            off += g.size
    return grad


def update_multipliers(ms: MultiplierState, ineq_values: np.ndarray,
                       eq_values: np.ndarray) -> MultiplierState:
    """Hinge-clamped multiplier step; the penalty is left unchanged here."""
    lam = np.maximum(0.0, ms.lam + ms.gamma * np.asarray(ineq_values, dtype=float))
    eta = ms.eta + ms.gamma * np.asarray(eq_values, dtype=float)
    return MultiplierState(lam, eta, ms.gamma)


def max_violation(ineq_values, eq_values) -> float:
    v = 0.0
    if np.size(ineq_values):
        v = max(v, float(np.max(ineq_values)))
    if np.size(eq_values):
        v = max(v, float(np.max(np.abs(eq_values))))
    return max(v, 0.0)


@dataclass
class AlmTrace:
    objective: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    step: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def alm_solve(prob: ConstrainedProblem, inner_maximizer, z0: np.ndarray,
              gamma0: float = 1.0, gamma_growth: float = 2.0, gamma_cap: float = 2.0 ** 20,
              tol_feas: float = 1e-6, tol_step: float = 1e-3, max_iter: int = 50,
              ms0: MultiplierState | None = None):
    """Alternate inner maximization of the augmented objective and multiplier
    updates until the iterate stalls and the constraints hold.

    ``inner_maximizer(z_warm, ms) -> z`` maximizes ``augmented_value`` over
    the feasible box / polytope from a warm start.  Returns
    ``(z, ms, trace)``; ``trace.converged`` is False when the iteration cap
    was hit first.  ``ms0`` warm-starts the multipliers.
    """
    z = np.asarray(z0, dtype=float).copy()
    ms = ms0 if ms0 is not None else init_multipliers(prob, z, gamma0)
    ms = MultiplierState(ms.lam.copy(), ms.eta.copy(), ms.gamma)
    trace = AlmTrace()
    unconstrained = not prob.inequalities and not prob.equalities

    for it in range(max_iter):
        z_new = inner_maximizer(z, ms)
        g = prob.ineq_values(z_new)
        h = prob.eq_values(z_new)
        viol = max_violation(g, h)
        step = float(np.max(np.abs(z_new - z))) if z_new.size else 0.0
        trace.objective.append(float(prob.objective(z_new)))
        trace.violation.append(viol)
        trace.gamma.append(ms.gamma)
        trace.step.append(step)
        trace.iterations = it + 1
        ms = update_multipliers(ms, g, h)
        z = z_new
        if unconstrained:
            trace.converged = True
            break
        if viol <= tol_feas and (it > 0 and step <= tol_step):
            trace.converged = True
            break
        ms.gamma = min(ms.gamma * gamma_growth, gamma_cap)
    return z, ms, trace
