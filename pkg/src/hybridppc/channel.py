"""Clustered, bandlimited mmWave MIMO channels with optional beam squint.

Each realization holds the delay-domain taps ``H_d`` and the per-subcarrier
responses ``H[k]``. Uniform linear arrays with half-wavelength spacing are
assumed at both ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ChannelParams, SystemConfig

__all__ = [
    "PathTable",
    "ChannelRealization",
    "steering_vector",
    "steering_matrix",
    "raised_cosine",
    "draw_paths",
    "channel_from_paths",
    "generate_channel",
    "freq_response",
    "freq_response_squint",
    "subcarrier_freq_ratios",
    "rng_from_seed",
]


def rng_from_seed(seed):
    """Generator for any Python integer seed, negative values included."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64))


def steering_vector(n_antennas, angle, freq_ratio=1.0):
    """ULA response ``exp(j m pi r cos(angle)) / sqrt(N)``, ``m = 0..N-1``."""
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    if not freq_ratio > 0:
        raise ValueError("freq_ratio must be positive")
    m = np.arange(n_antennas)
    return np.exp(1j * np.pi * freq_ratio * math.cos(angle) * m) / math.sqrt(n_antennas)


def steering_matrix(n_antennas, angles, freq_ratios=None):
    """Stacked steering vectors.

    Returns shape (N, P) for scalar ``freq_ratios`` or (K, N, P) when a
    vector of K ratios is given.
    """
    angles = np.asarray(angles, dtype=float)
    if not np.all(np.isfinite(angles)):
        raise ValueError("angles must be finite")
    m = np.arange(n_antennas)[:, np.newaxis]
    cos = np.cos(angles)[np.newaxis, :]
    if freq_ratios is None:
        return np.exp(1j * np.pi * m * cos) / math.sqrt(n_antennas)
    r = np.asarray(freq_ratios, dtype=float)[:, np.newaxis, np.newaxis]
    return np.exp(1j * np.pi * r * m[np.newaxis] * cos[np.newaxis]) / math.sqrt(n_antennas)


def raised_cosine(t, sample_period, rolloff):
    """Raised-cosine pulse; the removable singularity uses its limit."""
    t = np.asarray(t, dtype=float)
    x = t / sample_period
    beta = float(rolloff)
    main = np.sinc(x)
    if beta == 0.0:
        return main if main.ndim else float(main)
    den = 1.0 - (2.0 * beta * x) ** 2
    singular = np.isclose(np.abs(x), 1.0 / (2.0 * beta), rtol=0.0, atol=1e-12)
    safe_den = np.where(singular, 1.0, den)
    out = np.where(
        singular,
        (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)),
        main * np.cos(np.pi * beta * x) / safe_den,
    )
    return out if out.ndim else float(out)


@dataclass
class PathTable:
    """Per-path gains, delays (seconds), AoA and AoD (radians)."""

    gains: np.ndarray
    delays: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray

    def __post_init__(self):
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        self.delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        self.aoa = np.atleast_1d(np.asarray(self.aoa, dtype=float))
        self.aod = np.atleast_1d(np.asarray(self.aod, dtype=float))
        n = self.gains.size
        if not (self.delays.size == self.aoa.size == self.aod.size == n):
            raise ValueError("path table columns must have equal length")

    def __len__(self):
        return self.gains.size

    def records(self):
        return [
            dict(gain=complex(a), delay=float(t), aoa=float(p), aod=float(q))
            for a, t, p, q in zip(self.gains, self.delays, self.aoa, self.aod)
        ]


@dataclass
class ChannelRealization:
    taps: np.ndarray
    freq: np.ndarray
    path_table: PathTable
    seed: int = None
    squint: bool = field(default=False)

    @property
    def n_subcarriers(self):
        return self.freq.shape[0]


def _gains(rng, n_paths, rician_factor_db):
    alpha = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / math.sqrt(2.0)
    if n_paths == 1 or rician_factor_db == -math.inf:
        return alpha
    if rician_factor_db == math.inf:
        out = np.zeros(n_paths, dtype=complex)
        out[0] = math.sqrt(n_paths) * alpha[0] / abs(alpha[0])
        return out
    kf = 10.0 ** (rician_factor_db / 10.0)
    # Expected total power stays n_paths, the unit-variance NLoS budget.
    los_power = n_paths * kf / (kf + 1.0)
    nlos_var = n_paths / ((kf + 1.0) * (n_paths - 1))
    out = alpha * math.sqrt(nlos_var)
    out[0] = math.sqrt(los_power) * alpha[0] / abs(alpha[0])
    return out


def draw_paths(params: ChannelParams, rng) -> PathTable:
    """Draw angles, delays and gains for every ray of every cluster.

    Delays are drawn in units of the sample period so that realizations
    with equal seeds share their normalized delays at any bandwidth.
    """
    rays = np.asarray(params.rays_per_cluster)
    n_paths = int(rays.sum())
    cluster_of = np.repeat(np.arange(params.n_clusters), rays)
    spread = math.radians(params.angular_spread_deg)
    max_delay = params.n_taps - 1

    aoa_c = rng.uniform(0.0, 2.0 * math.pi, params.n_clusters)
    aod_c = rng.uniform(0.0, 2.0 * math.pi, params.n_clusters)
    delay_c = rng.uniform(0.0, 0.75 * max_delay, params.n_clusters)
    aoa = np.mod(aoa_c[cluster_of] + spread * rng.standard_normal(n_paths), 2.0 * math.pi)
    aod = np.mod(aod_c[cluster_of] + spread * rng.standard_normal(n_paths), 2.0 * math.pi)
    delay = delay_c[cluster_of] + np.abs(2.0 * rng.standard_normal(n_paths))
    delay = np.clip(delay, 0.0, max_delay)
    gains = _gains(rng, n_paths, params.rician_factor_db)
    return PathTable(gains=gains, delays=delay * params.ts, aoa=aoa, aod=aod)


def _scale(cfg, params, n_paths):
    return math.sqrt(cfg.n_tx * cfg.n_rx / (params.pathloss * n_paths))


def _pulse_matrix(paths, params):
    """p_rc(d T_s - tau_p) for every tap d and path p, shape (N_c, P)."""
    ts = params.ts
    d = np.arange(params.n_taps)[:, np.newaxis] * ts
    return np.atleast_2d(raised_cosine(d - paths.delays[np.newaxis, :], ts, params.rolloff))


def channel_from_paths(paths: PathTable, cfg: SystemConfig, params: ChannelParams):
    """Delay-domain taps of shape (N_c, N_r, N_t) for a given path table."""
    max_delay = (params.n_taps - 1) * params.ts
    if len(paths) and np.max(paths.delays) > max_delay * (1 + 1e-12) + 1e-300:
        raise RuntimeError("path delay exceeds the tap support")
    a_r = steering_matrix(cfg.n_rx, paths.aoa)
    a_t = steering_matrix(cfg.n_tx, paths.aod)
    weights = _pulse_matrix(paths, params) * paths.gains[np.newaxis, :]
    scale = _scale(cfg, params, len(paths))
    return scale * np.einsum("rp,dp,tp->drt", a_r, weights, a_t.conj(), optimize=True)


def freq_response(taps, n_subcarriers):
    """``H[k] = sum_d H_d exp(-j 2 pi k d / K)`` for k = 0..K-1."""
    taps = np.asarray(taps, dtype=complex)
    if taps.ndim == 2:
        taps = taps[np.newaxis]
    if n_subcarriers < taps.shape[0]:
        raise ValueError("n_subcarriers must be at least the number of taps")
    return np.fft.fft(taps, n=n_subcarriers, axis=0)


def subcarrier_freq_ratios(n_subcarriers, bandwidth_hz, carrier_hz):
    """``f_k / f_c`` with ``f_k = f_c + B (k / K - 1/2)``."""
    k = np.arange(n_subcarriers)
    return 1.0 + (bandwidth_hz / carrier_hz) * (k / n_subcarriers - 0.5)


def freq_response_squint(paths: PathTable, cfg: SystemConfig, params: ChannelParams):
    """Per-subcarrier responses with frequency-dependent steering vectors."""
    if params.bandwidth_hz is None or params.carrier_hz is None:
        raise ValueError("beam squint needs bandwidth_hz and carrier_hz")
    ratios = subcarrier_freq_ratios(cfg.n_subcarriers, params.bandwidth_hz, params.carrier_hz)
    a_r = steering_matrix(cfg.n_rx, paths.aoa, ratios)
    a_t = steering_matrix(cfg.n_tx, paths.aod, ratios)
    pulse = _pulse_matrix(paths, params)
    delay_resp = np.fft.fft(pulse, n=cfg.n_subcarriers, axis=0)
    diag = _scale(cfg, params, len(paths)) * delay_resp * paths.gains[np.newaxis, :]
    return np.einsum("krp,kp,ktp->krt", a_r, diag, a_t.conj(), optimize=True)


def generate_channel(cfg: SystemConfig, params: ChannelParams, seed) -> ChannelRealization:
    """Draw one channel realization; fully determined by ``seed``."""
    if cfg.n_subcarriers < params.n_taps:
        raise ValueError("n_subcarriers must be at least n_taps")
    paths = draw_paths(params, rng_from_seed(seed))
    taps = channel_from_paths(paths, cfg, params)
    if params.beam_squint:
        freq = freq_response_squint(paths, cfg, params)
    else:
        freq = freq_response(taps, cfg.n_subcarriers)
    return ChannelRealization(taps=taps, freq=freq, path_table=paths, seed=seed,
                              squint=params.beam_squint)
