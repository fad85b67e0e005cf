"""System and channel configuration records.

Both records validate themselves on construction and are immutable, so a
single instance can be shared between worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = ["SystemConfig", "ChannelParams", "PRESETS", "preset"]


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SystemConfig:
    """Link dimensions, SNR, phase-shifter resolution and antenna budgets.

    Parameters
    ----------
    n_tx, n_rx : int
        Transmit and receive antennas.
    l_tx, l_rx : int
        RF chains at each side.
    n_streams : int
        Data streams per subcarrier.
    n_subcarriers : int
        Number of OFDM subcarriers (a power of two).
    snr_db : float
        Transmit power over noise variance, in dB.
    q_bits_tx, q_bits_rx : int
        Phase-shifter quantization bits.
    budgets : sequence of float, optional
        Per-antenna power budgets, summed over subcarriers. ``None`` means
        ``n_subcarriers / n_tx`` on every antenna, i.e. unit average total
        power per subcarrier.
    """

    n_tx: int
    n_rx: int
    l_tx: int
    l_rx: int
    n_streams: int
    n_subcarriers: int = 256
    snr_db: float = 0.0
    q_bits_tx: int = 4
    q_bits_rx: int = 4
    budgets: Optional[tuple] = None

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "l_tx", "l_rx", "n_streams",
                     "n_subcarriers", "q_bits_tx", "q_bits_rx"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.l_tx > self.n_tx or self.l_rx > self.n_rx:
            raise ValueError("RF chains cannot exceed the number of antennas")
        if self.n_streams > min(self.l_tx, self.l_rx):
            raise ValueError("n_streams must not exceed min(l_tx, l_rx)")
        if not _is_power_of_two(self.n_subcarriers):
            raise ValueError("n_subcarriers must be a power of two")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.budgets is not None:
            budgets = tuple(float(b) for b in self.budgets)
            if len(budgets) != self.n_tx:
                raise ValueError(f"budgets must have n_tx={self.n_tx} entries")
            if not all(b > 0 and math.isfinite(b) for b in budgets):
                raise ValueError("budgets must be strictly positive")
            object.__setattr__(self, "budgets", budgets)

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def budget_vector(self) -> np.ndarray:
        if self.budgets is None:
            return np.full(self.n_tx, self.n_subcarriers / self.n_tx)
        return np.asarray(self.budgets, dtype=float)

    def replace(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelParams:
    """Clustered geometric channel parameters.

    ``rician_factor_db`` accepts ``math.inf`` (single dominant path) and
    ``-math.inf`` (no dominant path). ``sample_period=None`` resolves to
    ``1 / bandwidth_hz``.
    """

    n_clusters: int = 4
    rays_per_cluster: Sequence[int] = field(default=(5, 5, 5, 5))
    n_taps: int = 64
    sample_period: Optional[float] = None
    rolloff: float = 0.8
    pathloss: float = 1.0
    rician_factor_db: float = 0.0
    angular_spread_deg: float = 5.0
    bandwidth_hz: float = 1e9
    carrier_hz: float = 60e9
    beam_squint: bool = False

    def __post_init__(self):
        if not isinstance(self.n_clusters, (int, np.integer)) or self.n_clusters < 1:
            raise ValueError("n_clusters must be a positive integer")
        rays = self.rays_per_cluster
        if isinstance(rays, (int, np.integer)):
            rays = (int(rays),) * self.n_clusters
        rays = tuple(int(r) for r in rays)
        if len(rays) != self.n_clusters or any(r < 1 for r in rays):
            raise ValueError("rays_per_cluster needs one positive count per cluster")
        object.__setattr__(self, "rays_per_cluster", rays)
        if not isinstance(self.n_taps, (int, np.integer)) or self.n_taps < 1:
            raise ValueError("n_taps must be a positive integer")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")
        if not self.pathloss > 0:
            raise ValueError("pathloss must be positive")
        if not self.angular_spread_deg > 0:
            raise ValueError("angular_spread_deg must be positive")
        if not (self.bandwidth_hz > 0 and self.carrier_hz > 0):
            raise ValueError("bandwidth_hz and carrier_hz must be positive")
        if self.sample_period is not None and not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        if math.isnan(self.rician_factor_db):
            raise ValueError("rician_factor_db must not be NaN")

    @property
    def n_paths(self) -> int:
        return int(sum(self.rays_per_cluster))

    @property
    def ts(self) -> float:
        """Resolved sample period in seconds."""
        if self.sample_period is None:
            return 1.0 / self.bandwidth_hz
        return float(self.sample_period)

    def replace(self, **changes) -> "ChannelParams":
        return replace(self, **changes)


PRESETS = {
    "system_i": dict(n_tx=64, n_rx=32, l_tx=4, l_rx=4),
    "system_ii": dict(n_tx=64, n_rx=16, l_tx=4, l_rx=2),
}


def preset(name: str, **overrides) -> SystemConfig:
    """Build a :class:`SystemConfig` from a named preset.

    ``name`` is case-insensitive and tolerates spaces or dashes, so
    ``"System I"`` and ``"system-i"`` both work. ``n_streams`` defaults to
    ``min(l_tx, l_rx)``.
    """
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    if key not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[key])
    kwargs.setdefault("n_streams", min(kwargs["l_tx"], kwargs["l_rx"]))
    kwargs.update(overrides)
    return SystemConfig(**kwargs)
