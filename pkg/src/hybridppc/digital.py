"""All-digital precoder and combiner designs.

Every design uses the right and left singular vectors of the per-subcarrier
channels as precoding and combining directions and differs only in how the
power is spread over (subcarrier, stream) pairs:

``design_tpc``
    joint space-frequency waterfilling under a single total budget,
``design_ppc_relaxed``
    one power level per subcarrier under the smallest antenna budget,
``design_ppc_upper``
    per-stream powers under every per-antenna budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_channels, fix_phase
from .config import SystemConfig
from .solver import LN2, AllocationResult, PolytopeSpec, solve_separable_ppc, waterfill_total

__all__ = [
    "DigitalDesign",
    "svd_truncate",
    "channel_svd",
    "design_tpc",
    "design_ppc_relaxed",
    "design_ppc_upper",
    "DIGITAL_DESIGNS",
]


@dataclass
class DigitalDesign:
    """Per-subcarrier precoders and combiners with their factorization.

    Attributes
    ----------
    precoders : ndarray, shape (K, N_t, N_s)
        ``F[k] = directions[k] @ diag(sqrt(powers_k))``.
    combiners : ndarray, shape (K, N_r, N_s)
    allocation : AllocationResult
    directions : ndarray, shape (K, N_t, N_s)
        Right singular vectors of ``H[k]``.
    rx_directions : ndarray, shape (K, N_r, N_s)
        Left singular vectors of ``H[k]``.
    singular_values : ndarray, shape (K, N_s)
    """

    precoders: np.ndarray
    combiners: np.ndarray
    allocation: AllocationResult
    directions: np.ndarray
    rx_directions: np.ndarray
    singular_values: np.ndarray
    name: str = ""

    @property
    def stream_powers(self):
        """Powers reshaped to (K, N_s)."""
        return self.allocation.powers.reshape(self.singular_values.shape)


def svd_truncate(h, rank):
    """Top-``rank`` singular triplet of ``h`` under the phase convention.

    Returns ``(U, s, V)`` with ``h ~= U @ diag(s) @ V^*``. The first
    significant entry of each column of ``V`` is real and nonnegative; ``U``
    is rotated along so the product is unchanged. Works on stacks too.
    """
    h = np.asarray(h, dtype=complex)
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix contains non-finite entries")
    if h.ndim < 2:
        raise ValueError("expected a matrix or a stack of matrices")
    if not 1 <= rank <= min(h.shape[-2:]):
        raise ValueError(f"rank must lie in [1, {min(h.shape[-2:])}], got {rank}")
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    u, s = u[..., :rank], s[..., :rank]
    v = np.conj(np.swapaxes(vh, -1, -2))[..., :rank]
    v, rot = fix_phase(v)
    u = u * rot[..., np.newaxis, :]
    return u, s, v


def channel_svd(channels, rank):
    """Stacked truncated SVDs ``(U (K,N_r,r), s (K,r), V (K,N_t,r))``."""
    h = check_channels(channels)
    return svd_truncate(h, rank)


def _prepare(channels, cfg):
    h = check_channels(channels, cfg.n_rx, cfg.n_tx)
    u, s, v = svd_truncate(h, cfg.n_streams)
    return h, u, s, v


def _assemble(name, u, s, v, allocation):
    powers = allocation.powers.reshape(s.shape)
    f = v * np.sqrt(powers)[:, np.newaxis, :]
    return DigitalDesign(precoders=f, combiners=u.copy(), allocation=allocation,
                         directions=v, rx_directions=u, singular_values=s, name=name)


def design_tpc(channels, cfg: SystemConfig, total_budget=None) -> DigitalDesign:
    """Space-frequency waterfilling under a total power constraint.

    Gains are ``(SNR / N_s) sigma_l[k]^2`` and the budget is
    ``N_s * sum_j p_j`` unless ``total_budget`` (already in those units) is
    given.
    """
    _, u, s, v = _prepare(channels, cfg)
    gains = (cfg.snr / cfg.n_streams) * s**2
    budget = cfg.n_streams * float(np.sum(cfg.budget_vector)) if total_budget is None \
        else float(total_budget)
    alloc = waterfill_total(gains.ravel(), budget)
    return _assemble("tpc", u, s, v, alloc)


def _relaxed_levels(a, budget, max_iter=200):
    """Common per-subcarrier power ``r[k]`` maximizing ``sum log(1 + a r)``.

    ``a`` has shape (K, N_s); the constraint is ``sum_k r[k] <= budget``.
    The water level ``mu`` is found by bisection and each ``r[k]`` solves
    ``sum_l a_kl / (1 + a_kl r) = mu`` by Newton's method, which converges
    monotonically from zero because the left side is convex and decreasing.
    """
    slope0 = a.sum(axis=1)
    if not np.any(slope0 > 0):
        return np.zeros(a.shape[0]), 0.0

    def levels(mu):
        r = np.zeros(a.shape[0])
        live = slope0 > mu
        if not np.any(live):
            return r
        al = a[live]
        rl = np.zeros(al.shape[0])
        for _ in range(100):
            q = 1.0 + al * rl[:, np.newaxis]
            h = np.sum(al / q, axis=1) - mu
            dh = -np.sum((al / q) ** 2, axis=1)
            nxt = rl - h / dh
            done = np.all(np.abs(nxt - rl) <= 1e-15 * np.maximum(1.0, nxt))
            rl = nxt
            if done:
                break
        r[live] = rl
        return r

    hi = float(slope0.max())
    lo = float(np.max(np.sum(a / (1.0 + a * budget), axis=1)))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if levels(mid).sum() > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    r = levels(hi)
    total = r.sum()
    if total > 0:
        r *= budget / total
    return r, hi


def design_ppc_relaxed(channels, cfg: SystemConfig) -> DigitalDesign:
    """Equal-power streams per subcarrier under the smallest antenna budget.

    Every subcarrier gets ``F[k] = V[k] * rho[k]`` with
    ``(1/N_s) sum_k rho[k]^2 <= p_0 = min_j p_j``. Since the rows of a
    semi-unitary matrix have norm at most one, this satisfies all
    per-antenna budgets.
    """
    _, u, s, v = _prepare(channels, cfg)
    ns = cfg.n_streams
    budgets = cfg.budget_vector
    j0 = int(np.argmin(budgets))
    budget = ns * float(budgets[j0])
    a = (cfg.snr / ns) * s**2
    r, mu = _relaxed_levels(a, budget)
    powers = np.repeat(r, ns)

    obj = float(np.sum(np.log1p(a * r[:, np.newaxis]))) / LN2
    slope = np.sum(a / (1.0 + a * r[:, np.newaxis]), axis=1)
    multipliers = np.zeros(cfg.n_tx)
    multipliers[j0] = mu / LN2
    stationarity = np.where(r > 0, np.abs(slope - mu), np.maximum(slope - mu, 0.0)) / LN2
    kkt = float(max(np.max(stationarity, initial=0.0),
                    abs(budget - r.sum()) / budget))
    alloc = AllocationResult(powers=powers, objective_bits=obj, multipliers=multipliers,
                             kkt_residual=kkt, iterations=1, feasible=True,
                             info={"water_level": mu / LN2, "p0": float(budgets[j0])})
    return _assemble("ppc_relaxed", u, s, v, alloc)


def design_ppc_upper(channels, cfg: SystemConfig) -> DigitalDesign:
    """Per-stream powers under every per-antenna budget.

    Directions stay at the channel singular vectors, and the powers solve
    the separable problem with weights ``|v_jl[k]|^2 / N_s``.
    """
    _, u, s, v = _prepare(channels, cfg)
    ns = cfg.n_streams
    gains = (cfg.snr / ns) * s**2
    weights = (np.abs(v) ** 2 / ns).transpose(1, 0, 2).reshape(cfg.n_tx, -1)
    spec = PolytopeSpec(weights, cfg.budget_vector)
    alloc = solve_separable_ppc(gains.ravel(), spec)
    return _assemble("ppc_upper", u, s, v, alloc)


DIGITAL_DESIGNS = {
    "tpc": design_tpc,
    "ppc_relaxed": design_ppc_relaxed,
    "ppc_upper": design_ppc_upper,
}
