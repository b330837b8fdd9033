"""Random channel generation: placement, path loss, Rayleigh fading.

Large-scale fading follows ``PL(dB) = PL0 + 10 * theta * log10(d_km)`` with
urban macro/small-cell constants; small-scale fading is i.i.d. unit-mean
exponential on the power gain (|Rayleigh|^2), redrawn per sub-channel and
per antenna.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NetworkInstance


def dbm_to_watts(v: float) -> float:
    """Convert dBm to watts."""
    return 10.0 ** ((v - 30.0) / 10.0)


def watts_to_dbm(v: float) -> float:
    """Convert watts to dBm; requires v > 0."""
    if v <= 0:
        raise ValueError("watts_to_dbm requires a positive power")
    return 10.0 * math.log10(v) + 30.0


def path_loss_db(d: float, pl0: float, theta: float) -> float:
    """Path loss in dB at distance ``d`` meters (``d_km`` inside the log)."""
    if d <= 0:
        raise ValueError("distance must be > 0")
    return pl0 + 10.0 * theta * math.log10(d / 1000.0)


@dataclass
class Scenario:
    """Geometry, propagation and fading parameters of a random drop.

    Defaults give the standard two-tier urban setup: one macro cell of
    500 m radius overlaid with four 50 m small cells, 20 single-connection
    users, 8 sub-channels per cell and 2 antennas per user.
    """

    macro_radius_m: float = 500.0
    smallcell_radius_m: float = 50.0
    num_smallcells: int = 4
    users_total: int = 20
    num_subchannels: int = 8
    num_antennas: int = 2
    pl0_macro_db: float = 128.1
    theta_macro: float = 3.76
    pl0_small_db: float = 140.7
    theta_small: float = 3.67
    min_dist_m: float = 10.0
    noise_dbm: float = -120.0
    carrier_ghz: float = 2.0
    subchannel_khz: float = 180.0
    seed: int = 0

    def __post_init__(self):
        if self.macro_radius_m <= 0 or self.smallcell_radius_m <= 0:
            raise ValueError("radii must be > 0")
        if self.num_smallcells <= 0 or self.num_subchannels <= 0 or self.num_antennas <= 0:
            raise ValueError("counts must be > 0")
        if self.users_total < 0:
            raise ValueError("users_total must be >= 0")
        if self.theta_macro <= 0 or self.theta_small <= 0:
            raise ValueError("path-loss exponents must be > 0")
        if self.min_dist_m <= 0:
            raise ValueError("min_dist_m must be > 0")


def _uniform_disk(rng, n, radius, center=(0.0, 0.0)):
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([center[0] + r * np.cos(phi), center[1] + r * np.sin(phi)], axis=1)


def generate_instance(sc: Scenario) -> NetworkInstance:
    """Draw one random network instance; deterministic for a fixed seed.

    The macro BS sits at the origin, small-cell BSs are uniform in the macro
    disk, users are uniform in the macro disk, and every small cell is a
    candidate server for every user (open access).
    """
    rng = np.random.default_rng(sc.seed)
    num_bs = sc.num_smallcells + 1
    bs_pos = np.zeros((num_bs, 2))
    bs_pos[1:] = _uniform_disk(rng, sc.num_smallcells, sc.macro_radius_m)
    user_pos = _uniform_disk(rng, sc.users_total, sc.macro_radius_m)

    I, M, A = sc.users_total, sc.num_subchannels, sc.num_antennas
    gain = np.zeros((I, num_bs, M, A))
    if I > 0:
        d = np.maximum(np.linalg.norm(user_pos[:, None, :] - bs_pos[None, :, :], axis=2),
                       sc.min_dist_m)                          # (I, num_bs)
        pl = np.empty_like(d)
        pl[:, 0] = sc.pl0_macro_db + 10.0 * sc.theta_macro * np.log10(d[:, 0] / 1000.0)
        pl[:, 1:] = sc.pl0_small_db + 10.0 * sc.theta_small * np.log10(d[:, 1:] / 1000.0)
        large = 10.0 ** (-pl / 10.0)
        fading = rng.exponential(scale=1.0, size=(I, num_bs, M, A))
        gain = large[:, :, None, None] * fading

    return NetworkInstance(gain, dbm_to_watts(sc.noise_dbm))
