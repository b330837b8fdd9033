"""System model for the two-tier OFDMA uplink.

Index conventions used throughout the package:

* base stations ``b = 0 .. num_bs-1`` with ``b = 0`` the macro BS; small
  cells are ``b >= 1`` and are the only serving candidates,
* users ``i`` are small-cell users; the macro tier enters only through the
  per-sub-channel cross-tier interference budget,
* ``gain[i, b, m, a]`` is the linear power gain from user ``i`` transmitting
  on sub-channel ``m`` with its antenna ``a`` into BS ``b``,
* powers are in watts, gains linear (not dB), rates in bps/Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)


class IndexRangeError(IndexError):
    """An (i, b, m, a) index lies outside the instance dimensions."""


@dataclass(frozen=True)
class NetworkInstance:
    """Immutable scenario data shared read-only by all solver stages.

    Parameters
    ----------
    gain : ndarray, shape (num_users, num_bs, num_subchannels, num_antennas)
        Linear channel power gains, all finite and >= 0.  Column ``b = 0``
        holds the cross-tier gains into the macro BS.
    noise_power : float
        Receiver noise power in watts, > 0.
    home_cell : tuple of tuple of int, optional
        Candidate serving small cells per user (open access by default:
        every small cell).
    """

    gain: np.ndarray
    noise_power: float
    home_cell: tuple = ()

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=float)
        if g.ndim != 4:
            raise ValueError("gain must have shape (users, bs, subchannels, antennas)")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("gains must be finite and >= 0")
        if not (self.noise_power > 0):
            raise ValueError("noise_power must be > 0")
        if g.shape[1] < 1:
            raise ValueError("need at least the macro BS")
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "gain", g)
        if not self.home_cell:
            cells = tuple(range(1, g.shape[1]))
            object.__setattr__(self, "home_cell", tuple(cells for _ in range(g.shape[0])))
        elif len(self.home_cell) != g.shape[0]:
            raise ValueError("home_cell must have one entry per user")

    @property
    def num_users(self):
        return self.gain.shape[0]

    @property
    def num_bs(self):
        return self.gain.shape[1]

    @property
    def num_smallcells(self):
        return self.gain.shape[1] - 1

    @property
    def num_subchannels(self):
        return self.gain.shape[2]

    @property
    def num_antennas(self):
        return self.gain.shape[3]


def restrict_antennas(inst: NetworkInstance, keep: int) -> NetworkInstance:
    """Sub-instance using only the first ``keep`` antennas of each user."""
    if not (1 <= keep <= inst.num_antennas):
        raise ValueError("keep out of range")
    return NetworkInstance(inst.gain[:, :, :, :keep].copy(), inst.noise_power, inst.home_cell)


@dataclass
class Assignment:
    """Joint user-BS-sub-channel indicator ``s`` and antenna indicator ``x``.

    ``s[i, b, m]`` and ``x[i, m, a]`` are binary unless ``relaxed`` is set, in
    which case entries live in [0, 1].  The macro column ``s[:, 0, :]`` exists
    for index alignment and is always zero for valid schedules.
    """

    s: np.ndarray
    x: np.ndarray
    relaxed: bool = False

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.s.ndim != 3 or self.x.ndim != 3 or self.s.shape[0] != self.x.shape[0] \
                or self.s.shape[2] != self.x.shape[1]:
            raise ValueError("inconsistent assignment tensor shapes")
        if np.any(self.s < 0) or np.any(self.s > 1) or np.any(self.x < 0) or np.any(self.x > 1):
            raise ValueError("assignment entries must lie in [0, 1]")
        if not self.relaxed:
            if np.any((self.s != 0) & (self.s != 1)) or np.any((self.x != 0) & (self.x != 1)):
                raise ValueError("binary assignment has fractional entries")

    def copy(self):
        return Assignment(self.s.copy(), self.x.copy(), self.relaxed)


def empty_assignment(inst: NetworkInstance) -> Assignment:
    """All-zero (nobody scheduled) binary assignment."""
    s = np.zeros((inst.num_users, inst.num_bs, inst.num_subchannels))
    x = np.zeros((inst.num_users, inst.num_subchannels, inst.num_antennas))
    return Assignment(s, x)


def assignment_from_tuples(inst: NetworkInstance, tuples) -> Assignment:
    """Binary assignment activating the given ``(i, b, m, a)`` tuples.

    Antenna indicators on inactive (user, sub-channel) pairs are canonically
    set to antenna 0 so every row of ``x`` is one-hot.
    """
    asg = empty_assignment(inst)
    asg.x[:, :, 0] = 1.0
    for (i, b, m, a) in tuples:
        if asg.s[i].sum() != 0:
            raise ValueError(f"user {i} assigned twice")
        asg.s[i, b, m] = 1.0
        asg.x[i, m, :] = 0.0
        asg.x[i, m, a] = 1.0
    return asg


def scheduled_users(asg: Assignment) -> np.ndarray:
    """Boolean mask of users with an active (BS, sub-channel) slot."""
    return asg.s.sum(axis=(1, 2)) > 0.5


def active_tuples(asg: Assignment):
    """List of active ``(i, b, m, a)`` tuples of a binary assignment."""
    if asg.relaxed:
        raise ValueError("active_tuples requires a binary assignment")
    out = []
    for i in range(asg.s.shape[0]):
        hits = np.argwhere(asg.s[i] > 0.5)
        if len(hits) == 0:
            continue
        b, m = map(int, hits[0])
        a = int(np.argmax(asg.x[i, m]))
        out.append((i, b, m, a))
    return out


@dataclass
class PowerAllocation:
    """Transmit powers ``p[i, b, m, a]`` in watts, >= 0.

    Positive power on a tuple with ``s * x = 0`` is legal solver state; it
    contributes neither rate nor budget use.
    """

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 4:
            raise ValueError("power tensor must be 4-d")
        if np.any(self.p < 0) or not np.all(np.isfinite(self.p)):
            raise ValueError("powers must be finite and >= 0")

    def copy(self):
        return PowerAllocation(self.p.copy())


def zero_power(inst: NetworkInstance) -> PowerAllocation:
    return PowerAllocation(np.zeros_like(inst.gain))


def power_from_levels(inst: NetworkInstance, asg: Assignment, levels) -> PowerAllocation:
    """Scatter per-user power levels onto the active tuples of ``asg``."""
    p = np.zeros_like(inst.gain)
    levels = np.asarray(levels, dtype=float)
    for (i, b, m, a) in active_tuples(asg):
        p[i, b, m, a] = levels[i]
    return PowerAllocation(p)


def per_user_power(asg: Assignment, p: PowerAllocation) -> np.ndarray:
    """Total budget-relevant (s*x-active) power per user."""
    act = np.einsum("ibm,ima,ibma->i", asg.s, asg.x, p.p)
    return act


@dataclass
class SolverConfig:
    """All solver tunables.  Powers in watts; dBm only at config boundaries.

    ``mu1``/``mu2`` set to ``None`` select the automatic penalty weight
    ``10 * max(rate coefficient)`` at every scheduling call.
    """

    p_max: float = 10.0 ** ((23.0 - 30.0) / 10.0)   # 23 dBm
    i_th: float = 1e-12                              # -90 dBm
    r_min: float = 5.0                               # bps/Hz
    mu1: float | None = None
    mu2: float | None = None
    psi0: float = 1.0
    psi_cap: float = 2.0 ** 20
    eps_outer: float = 0.1
    eps_power: float = 1e-3
    t_j_max: int = 25
    alm_max_iter: int = 30
    inner_max_iter: int = 200
    outer_max_iter: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.eps_outer <= 0 or self.eps_power <= 0:
            raise ValueError("tolerances must be > 0")
        if self.p_max < 0 or self.i_th < 0 or self.r_min < 0:
            raise ValueError("p_max, i_th, r_min must be >= 0")
        for mu in (self.mu1, self.mu2):
            if mu is not None and mu <= 0:
                raise ValueError("penalty weights must be > 0")
        if self.psi0 <= 0 or self.psi_cap < self.psi0:
            raise ValueError("bad psi schedule")


def _check_index(inst, i=None, b=None, m=None, a=None):
    if i is not None and not (0 <= i < inst.num_users):
        raise IndexRangeError(f"user index {i} out of range")
    if b is not None and not (0 <= b < inst.num_bs):
        raise IndexRangeError(f"bs index {b} out of range")
    if m is not None and not (0 <= m < inst.num_subchannels):
        raise IndexRangeError(f"sub-channel index {m} out of range")
    if a is not None and not (0 <= a < inst.num_antennas):
        raise IndexRangeError(f"antenna index {a} out of range")


def interference(inst: NetworkInstance, asg: Assignment, p: PowerAllocation,
                 b: int, m: int, i: int) -> float:
    """Co-channel interference seen at BS ``b`` on sub-channel ``m`` by user ``i``.

    Sums ``s[l,b',m] * x[l,m,a'] * p[l,b',m,a'] * gain[l,b,m,a']`` over users
    ``l != i`` served by BSs ``b' != b``.
    """
    _check_index(inst, i=i, b=b, m=m)
    sp = asg.s[:, :, m][:, :, None] * p.p[:, :, m, :]        # (I, nb, A): s*p per (l, b', a')
    sp_other = sp.sum(axis=1) - sp[:, b, :]                  # exclude b' == b
    contrib = (asg.x[:, m, :] * sp_other * inst.gain[:, b, m, :]).sum(axis=1)
    contrib[i] = 0.0
    return float(contrib.sum())


def rate(inst: NetworkInstance, asg: Assignment, p: PowerAllocation,
         i: int, b: int, m: int, a: int) -> float:
    """Spectral efficiency of the tuple (i, b, m, a) in bps/Hz."""
    _check_index(inst, i=i, b=b, m=m, a=a)
    signal = p.p[i, b, m, a] * inst.gain[i, b, m, a]
    denom = inst.noise_power + interference(inst, asg, p, b, m, i)
    return math.log2(1.0 + signal / denom)


def per_user_rates(inst: NetworkInstance, asg: Assignment, p: PowerAllocation) -> np.ndarray:
    """Rate of each user's active tuple (0 for unscheduled users)."""
    out = np.zeros(inst.num_users)
    for (i, b, m, a) in active_tuples(asg):
        out[i] = rate(inst, asg, p, i, b, m, a)
    return out


def sum_rate(inst: NetworkInstance, asg: Assignment, p: PowerAllocation) -> float:
    """Network objective: summed rate over all active small-cell tuples."""
    if asg.relaxed:
        raise ValueError("sum_rate is defined for binary assignments only")
    total = 0.0
    for (i, b, m, a) in active_tuples(asg):
        if b == 0:
            continue
        total += rate(inst, asg, p, i, b, m, a)
    return total


@dataclass(frozen=True)
class Violation:
    """A single violated constraint with its positive slack (excess)."""

    constraint: str
    index: tuple
    excess: float

    def __str__(self):
        return f"{self.constraint}{list(self.index)}: excess {self.excess:.3e}"


def cross_tier_interference(inst: NetworkInstance, asg: Assignment,
                            p: PowerAllocation) -> np.ndarray:
    """Active-power interference received at the macro BS, per sub-channel."""
    # x[i,m,a] * s[i,b,m] * p[i,b,m,a] * gain[i,0,m,a] summed over i, b>=1, a
    s_sc = asg.s[:, 1:, :]
    p_sc = p.p[:, 1:, :, :]
    return np.einsum("ibm,ima,ibma,ima->m", s_sc, asg.x, p_sc, inst.gain[:, 0, :, :])


def check_feasibility(inst: NetworkInstance, asg: Assignment, p: PowerAllocation,
                      cfg: SolverConfig, rtol: float = 1e-9) -> list:
    """Report every violated constraint with its slack; empty means feasible.

    Conventions: the minimum-rate requirement applies only to scheduled
    users, and the one-antenna rule is checked on (user, sub-channel) pairs
    that actually carry a schedule (elsewhere at most one antenna may be
    flagged).  Budget sums count only s*x-active power.
    """
    viol = []
    tol = lambda scale: rtol * max(abs(scale), 1e-300)

    # C4 -- nonnegative powers
    for idx in np.argwhere(p.p < 0):
        viol.append(Violation("C4", tuple(int(v) for v in idx), float(-p.p[tuple(idx)])))

    # C8/C9 -- binary indicators
    for name, arr in (("C9", asg.s), ("C8", asg.x)):
        off = np.minimum(np.abs(arr), np.abs(arr - 1.0))
        for idx in np.argwhere(off > 1e-12):
            viol.append(Violation(name, tuple(int(v) for v in idx), float(off[tuple(idx)])))

    # C5 -- each (b, m) slot serves at most one user
    slot_load = asg.s.sum(axis=0)
    for b, m in np.argwhere(slot_load > 1.0 + tol(1.0)):
        viol.append(Violation("C5", (int(b), int(m)), float(slot_load[b, m] - 1.0)))

    # C6 -- each user holds at most one slot
    user_load = asg.s.sum(axis=(1, 2))
    for (i,) in np.argwhere(user_load > 1.0 + tol(1.0)):
        viol.append(Violation("C6", (int(i),), float(user_load[i] - 1.0)))

    # C7 -- one antenna per scheduled (i, m); at most one elsewhere
    chan_sched = asg.s.sum(axis=1)      # (I, M)
    ant_sum = asg.x.sum(axis=2)         # (I, M)
    for i in range(asg.s.shape[0]):
        for m in range(asg.s.shape[2]):
            if chan_sched[i, m] > 0.5:
                if abs(ant_sum[i, m] - 1.0) > tol(1.0):
                    viol.append(Violation("C7", (i, m), float(abs(ant_sum[i, m] - 1.0))))
            elif ant_sum[i, m] > 1.0 + tol(1.0):
                viol.append(Violation("C7", (i, m), float(ant_sum[i, m] - 1.0)))

    # C1 -- per-user power budget over active tuples
    used = per_user_power(asg, p)
    for (i,) in np.argwhere(used > cfg.p_max + tol(cfg.p_max)):
        viol.append(Violation("C1", (int(i),), float(used[i] - cfg.p_max)))

    # C2 -- cross-tier interference cap per sub-channel
    cross = cross_tier_interference(inst, asg, p)
    for (m,) in np.argwhere(cross > cfg.i_th + tol(cfg.i_th)):
        viol.append(Violation("C2", (int(m),), float(cross[m] - cfg.i_th)))

    # C3 -- minimum rate, scheduled users only
    if cfg.r_min > 0 and not asg.relaxed:
        for (i, b, m, a) in active_tuples(asg):
            if b == 0:
                continue
            r = rate(inst, asg, p, i, b, m, a)
            if r < cfg.r_min - tol(cfg.r_min):
                viol.append(Violation("C3", (i,), float(cfg.r_min - r)))

    return viol
