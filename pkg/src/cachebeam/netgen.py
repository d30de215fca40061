"""Physical network generation: BS lattice, users, channels, noise.

Geometry is in km. Channel amplitudes are linear (not dB) and compose a
distance-dependent path loss, i.i.d. log-normal shadowing per BS-user link,
a per-link antenna gain, and unit-variance Rayleigh fading per antenna.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeds import stream

# Defaults match the simulated deployment: 10 dBi transmit antenna gain,
# 8 dB shadowing, -172 dBm/Hz noise PSD over 10 MHz.
DEFAULT_ANTENNA_GAIN_DBI = 10.0
DEFAULT_SHADOWING_STD_DB = 8.0
DEFAULT_NOISE_PSD_DBM_HZ = -172.0
DEFAULT_BANDWIDTH_HZ = 1e7

# Links shorter than 1 m are clamped to keep the path-loss model finite.
MIN_LINK_DISTANCE_KM = 1e-3


class ConfigurationError(ValueError):
    """Raised for unsupported or inconsistent network configuration."""


@dataclass(frozen=True)
class NetworkLayout:
    """BS positions and per-BS radio parameters.

    bs_positions: (L, 2) array of coordinates in km, all inside the disk
    of the given radius centred at the origin.
    """

    bs_positions: np.ndarray
    radius: float
    antennas_per_bs: int
    power_budget_per_bs: np.ndarray
    antenna_gain_dbi: float = DEFAULT_ANTENNA_GAIN_DBI

    def __post_init__(self):
        pos = np.asarray(self.bs_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ConfigurationError("bs_positions must be a (L, 2) array with L >= 1")
        budgets = np.broadcast_to(
            np.asarray(self.power_budget_per_bs, dtype=float), (pos.shape[0],)
        ).copy()
        object.__setattr__(self, "bs_positions", pos)
        object.__setattr__(self, "power_budget_per_bs", budgets)
        if self.antennas_per_bs < 1:
            raise ConfigurationError("antennas_per_bs must be >= 1")
        if np.any(budgets <= 0):
            raise ConfigurationError("per-BS power budgets must be positive")
        if np.any(np.linalg.norm(pos, axis=1) > self.radius + 1e-12):
            raise ConfigurationError("all BS positions must lie within the disk radius")

    @property
    def num_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def num_antennas_total(self) -> int:
        return self.num_bs * self.antennas_per_bs


@dataclass(frozen=True)
class ChannelRealization:
    """Per-user network-wide channels.

    h: (K, L*N_t) complex matrix, one aggregate channel vector per user.
    H: (K, L*N_t, L*N_t) stack of rank-one outer products h_k h_k^H.
    noise_power: receiver noise variance in watts.
    """

    h: np.ndarray
    H: np.ndarray
    noise_power: float

    def __post_init__(self):
        if self.noise_power <= 0:
            raise ConfigurationError("noise power must be positive")


def generate_layout(
    L: int,
    radius: float,
    spacing: float,
    seed: int = 0,
    *,
    antennas_per_bs: int = 3,
    power_budget_per_bs: float = 10.0,
    antenna_gain_dbi: float = DEFAULT_ANTENNA_GAIN_DBI,
    positions: np.ndarray | None = None,
) -> NetworkLayout:
    """Build the BS layout.

    Natively supported lattices: L=1 (single BS at the origin) and L=7
    (centre BS plus a hexagonal ring of radius `spacing`, so adjacent BSs
    are exactly `spacing` km apart). Any other L requires explicit
    `positions`. The layout itself is deterministic; `seed` is accepted for
    interface uniformity with the other generators.
    """
    del seed
    if positions is not None:
        pos = np.asarray(positions, dtype=float)
        if pos.shape[0] != L:
            raise ConfigurationError(f"got {pos.shape[0]} positions for L={L}")
    elif L == 1:
        pos = np.zeros((1, 2))
    elif L == 7:
        angles = np.deg2rad(np.arange(0, 360, 60))
        ring = spacing * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        pos = np.vstack([np.zeros((1, 2)), ring])
    else:
        raise ConfigurationError(
            f"L={L} has no native lattice; pass explicit positions"
        )
    return NetworkLayout(
        bs_positions=pos,
        radius=radius,
        antennas_per_bs=antennas_per_bs,
        power_budget_per_bs=power_budget_per_bs,
        antenna_gain_dbi=antenna_gain_dbi,
    )


def load_layout_positions(path) -> np.ndarray:
    """Read a layout override file: one `x_km y_km` pair per line."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y = line.split()
            rows.append((float(x), float(y)))
    if not rows:
        raise ConfigurationError(f"no positions found in {path}")
    return np.asarray(rows, dtype=float)


def place_users(layout: NetworkLayout, n: int, seed: int) -> np.ndarray:
    """Drop n users i.i.d. uniform over the coverage disk; (n, 2) in km."""
    if n < 1:
        raise ConfigurationError("need at least one user")
    rng = stream(seed, "users")
    r = layout.radius * np.sqrt(rng.random(n))
    phi = 2.0 * np.pi * rng.random(n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def pathloss_db(d):
    """Distance-dependent path loss 148.1 + 37.6 log10(d), d in km."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path loss requires d > 0")
    return 148.1 + 37.6 * np.log10(d)


def noise_power(psd_dbm_hz: float, bandwidth_hz: float) -> float:
    """Noise power in watts for a given PSD (dBm/Hz) and bandwidth (Hz)."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return 10.0 ** ((psd_dbm_hz + 10.0 * np.log10(bandwidth_hz) - 30.0) / 10.0)


def generate_channels(
    layout: NetworkLayout,
    users: np.ndarray,
    seed: int,
    *,
    interval: int = 0,
    shadowing_std_db: float = DEFAULT_SHADOWING_STD_DB,
    fading: bool = True,
    noise_w: float | None = None,
) -> ChannelRealization:
    """Draw one channel realization for the given users.

    Per user k and BS l the amplitude gain is
    a = 10^((-PL(d) - X + G) / 20) with X ~ Normal(0, shadowing_std_db)
    i.i.d. per link and G the per-link antenna gain in dBi. The N_t entries
    of h for BS l are a * CN(0, 1) i.i.d.; with `fading=False` they are all
    exactly a. `shadowing_std_db=0` disables shadowing. Draw order is fixed
    (all shadowing first, then all fading) so outputs are bit-reproducible.
    """
    users = np.atleast_2d(np.asarray(users, dtype=float))
    if layout.num_bs < 1 or users.shape[0] < 1:
        raise ConfigurationError("layout and users must be nonempty")
    K, L, Nt = users.shape[0], layout.num_bs, layout.antennas_per_bs
    rng = stream(seed, "channels", interval)

    d = np.linalg.norm(users[:, None, :] - layout.bs_positions[None, :, :], axis=2)
    d = np.maximum(d, MIN_LINK_DISTANCE_KM)
    pl = pathloss_db(d)
    shadow = (
        rng.normal(0.0, shadowing_std_db, size=(K, L))
        if shadowing_std_db > 0
        else np.zeros((K, L))
    )
    amp = 10.0 ** ((-pl - shadow + layout.antenna_gain_dbi) / 20.0)

    if fading:
        fad = (
            rng.standard_normal((K, L, Nt)) + 1j * rng.standard_normal((K, L, Nt))
        ) / np.sqrt(2.0)
    else:
        fad = np.ones((K, L, Nt), dtype=complex)
    h = (amp[:, :, None] * fad).reshape(K, L * Nt)
    H = h[:, :, None] * h[:, None, :].conj()
    sigma2 = (
        noise_w
        if noise_w is not None
        else noise_power(DEFAULT_NOISE_PSD_DBM_HZ, DEFAULT_BANDWIDTH_HZ)
    )
    return ChannelRealization(h=h, H=H, noise_power=float(sigma2))
