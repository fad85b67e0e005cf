"""Hybrid analog/digital factorization under per-antenna power budgets.

The pipeline starts from an all-digital design:

1. the RF precoder takes the dominant eigenvectors of ``sum_k F[k] F[k]^*``
   and quantizes their phases,
2. per-subcarrier baseband directions come from the SVD of
   ``F[k]^* F_RF``,
3. the RF combiner does the same with the receive directions, and the
   baseband combiner makes ``W_RF W_BB[k]`` semi-unitary,
4. the stream powers solve the coupled log-det problem on the effective
   channels while respecting every antenna budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_channels, check_matrix_stack, eigh_desc, fix_phase
from .config import SystemConfig
from .digital import DigitalDesign, design_ppc_upper
from .solver import AllocationResult, PolytopeSpec, solve_logdet_ppc

__all__ = [
    "HybridDesign",
    "CombinerFactors",
    "phase_grid",
    "phase_indices",
    "quantize_phases",
    "rf_precoder",
    "rf_combiner",
    "bb_precoder_directions",
    "bb_combiner",
    "effective_channels",
    "finalize_power",
    "design_hybrid",
]

RANK_TOL = 1e-10


@dataclass
class CombinerFactors:
    """Baseband combiners and the factors used to build them."""

    w_bb: np.ndarray
    z_w: np.ndarray
    rf_rank: int
    degraded: bool


@dataclass
class HybridDesign:
    """RF/baseband factorization at both ends of the link.

    Attributes
    ----------
    f_rf : ndarray, shape (N_t, L_t)
    f_bb : ndarray, shape (K, L_t, N_s)
    w_rf : ndarray, shape (N_r, L_r)
    w_bb : ndarray, shape (K, L_r, N_s)
    allocation : AllocationResult
    v_g : ndarray, shape (K, L_t, N_s)
        Baseband precoding directions.
    z_w : ndarray, shape (K, L_r, N_s)
    effective : ndarray, shape (K, N_s, N_s)
        Effective channels used for the final power allocation.
    """

    f_rf: np.ndarray
    f_bb: np.ndarray
    w_rf: np.ndarray
    w_bb: np.ndarray
    allocation: AllocationResult
    v_g: np.ndarray
    z_w: np.ndarray
    effective: np.ndarray
    flags: dict = field(default_factory=dict)
    name: str = "ppc_hybrid"

    @property
    def precoders(self):
        """Overall precoders ``F_RF F_BB[k]``, shape (K, N_t, N_s)."""
        return np.einsum("tl,kls->kts", self.f_rf, self.f_bb)

    @property
    def combiners(self):
        """Overall combiners ``W_RF W_BB[k]``, shape (K, N_r, N_s)."""
        return np.einsum("rl,kls->krs", self.w_rf, self.w_bb)


# ---------------------------------------------------------------------------
# phase quantization
# ---------------------------------------------------------------------------

def _check_bits(q_bits):
    if not isinstance(q_bits, (int, np.integer)) or q_bits < 1:
        raise ValueError(f"q_bits must be a positive integer, got {q_bits!r}")
    return int(q_bits)


def _snap_unit(z, reach=4):
    """Nudge ``z`` by a few ulps so that ``abs(z) == 1`` in floating point."""
    steps = np.arange(-reach, reach + 1)
    c = z.real + steps[:, np.newaxis] * np.spacing(z.real)
    s = z.imag + steps[np.newaxis, :] * np.spacing(z.imag)
    cand = (c + 1j * s).ravel()
    cost = (np.abs(steps)[:, np.newaxis] + np.abs(steps)[np.newaxis, :]).ravel()
    # Same vectorized modulus that callers use on whole matrices.
    ok = np.abs(cand) == 1.0
    if not np.any(ok):
        return z
    return cand[ok][np.argmin(cost[ok])]


def phase_grid(q_bits):
    """The ``2**q_bits`` unit-modulus values ``exp(j 2 pi i / 2**q_bits)``.

    Multiples of a quarter turn are stored exactly and the other points are
    moved by at most a few ulps so that their modulus evaluates to exactly
    one. Membership tests against this table can use equality.
    """
    n = 1 << _check_bits(q_bits)
    grid = np.exp(2j * np.pi * np.arange(n) / n)
    if n >= 4:
        quarter = n // 4
        grid[::quarter] = [1, 1j, -1, -1j]
    elif n == 2:
        grid[:] = [1, -1]
    return np.array([_snap_unit(z) for z in grid])


def phase_indices(m, q_bits):
    """Index of the nearest grid phase for every entry of ``m``.

    Phases are taken in ``[0, 2 pi)``; ties go to the smaller index, and the
    tie between the last grid point and ``2 pi`` resolves to index 0.
    Entries of magnitude zero map to index 0.
    """
    n = 1 << _check_bits(q_bits)
    m = np.asarray(m, dtype=complex)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    step = 2.0 * np.pi / n
    phi = np.mod(np.angle(m), 2.0 * np.pi)
    pos = phi / step - 0.5
    idx = np.mod(np.ceil(pos).astype(np.int64), n)
    return np.where((pos == n - 1) | (m == 0), 0, idx)


def quantize_phases(m, q_bits):
    """Unit-modulus matrix with the nearest ``q_bits`` phase of every entry."""
    return phase_grid(q_bits)[phase_indices(m, q_bits)]


# ---------------------------------------------------------------------------
# RF stages
# ---------------------------------------------------------------------------

def _dominant_basis(stack, n):
    gram = np.einsum("kij,klj->il", stack, stack.conj())
    return eigh_desc(gram, n)


def rf_precoder(all_digital: DigitalDesign, cfg: SystemConfig, quantize=True):
    """RF precoder from the dominant eigenvectors of ``sum_k F[k] F[k]^*``.

    With ``quantize=False`` the unit-norm eigenvectors are returned, which
    is handy for checking the eigendesign before quantization.
    """
    f = check_matrix_stack(all_digital.precoders, "precoders", n_rows=cfg.n_tx)
    if cfg.l_tx > cfg.n_tx:
        raise ValueError("l_tx cannot exceed n_tx")
    _, u_t = _dominant_basis(f, cfg.l_tx)
    return quantize_phases(u_t, cfg.q_bits_tx) if quantize else u_t


def rf_combiner(rx_directions, cfg: SystemConfig, quantize=True):
    """RF combiner from the dominant eigenvectors of ``sum_k U[k] U[k]^*``."""
    u = check_matrix_stack(rx_directions, "rx_directions", n_rows=cfg.n_rx)
    if cfg.l_rx > cfg.n_rx:
        raise ValueError("l_rx cannot exceed n_rx")
    _, u_s = _dominant_basis(u, cfg.l_rx)
    return quantize_phases(u_s, cfg.q_bits_rx) if quantize else u_s


# ---------------------------------------------------------------------------
# baseband stages
# ---------------------------------------------------------------------------

def _complete_basis(keep, hint):
    """Orthonormal columns spanning ``keep`` plus directions drawn from ``hint``.

    ``keep`` is (L, r) with orthonormal columns, ``hint`` is (L, n) and the
    result is (L, n). Missing directions come from the part of ``hint``
    outside ``span(keep)``, topped up from the identity when that is not
    enough.
    """
    n_missing = hint.shape[1] - keep.shape[1]
    cands = [hint, np.eye(hint.shape[0], dtype=complex)]
    basis = keep
    for cand in cands:
        if n_missing <= 0:
            break
        resid = cand - basis @ (basis.conj().T @ cand)
        u, s, _ = np.linalg.svd(resid, full_matrices=False)
        good = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 0.0)))
        take = min(n_missing, good)
        basis = np.concatenate([basis, u[:, :take]], axis=1)
        n_missing -= take
    return basis


def bb_precoder_directions(all_digital: DigitalDesign, f_rf):
    """Baseband directions ``V_G[k]`` and the per-antenna polytope weights.

    ``G[k] = F[k]^* F_RF`` is factored as ``U_G S_G V_G^*`` and the
    directions are the ``N_s`` columns of ``V_G``. When ``G[k]`` is rank
    deficient (streams switched off in the all-digital design), the missing
    columns are taken from ``F_RF^* V_H[k]`` projected away from the ones
    already found.

    Returns
    -------
    v_g : ndarray, shape (K, L_t, N_s)
    weights : ndarray, shape (N_t, K * N_s)
        ``|[F_RF V_G[k]]_{jl}|^2 / N_s`` at column ``k * N_s + l``.
    deficient : ndarray of bool, shape (K,)
    """
    f = check_matrix_stack(all_digital.precoders, "precoders")
    k, n_tx, ns = f.shape
    f_rf = check_matrix_stack(f_rf, "f_rf", n_rows=n_tx)[0]
    l_tx = f_rf.shape[1]
    if l_tx < ns:
        raise ValueError("f_rf needs at least n_streams columns")
    g = np.einsum("kts,tl->ksl", f.conj(), f_rf)
    _, s_g, vh = np.linalg.svd(g, full_matrices=False)
    v_g = np.conj(np.swapaxes(vh, -1, -2))
    tol = RANK_TOL * max(float(s_g.max(initial=0.0)), np.finfo(float).tiny)
    ranks = np.sum(s_g > tol, axis=1)
    deficient = ranks < ns
    if np.any(deficient):
        hint = np.einsum("tl,kts->kls", f_rf.conj(), all_digital.directions)
        for kk in np.flatnonzero(deficient):
            v_g[kk] = _complete_basis(v_g[kk, :, : ranks[kk]], hint[kk])
    v_g, _ = fix_phase(v_g)
    beams = np.einsum("tl,kls->kts", f_rf, v_g)
    weights = (np.abs(beams) ** 2 / ns).transpose(1, 0, 2).reshape(n_tx, k * ns)
    return v_g, weights, deficient


def bb_combiner(w_rf, rx_directions) -> CombinerFactors:
    """Baseband combiners that make ``W_RF W_BB[k]`` semi-unitary.

    With ``W_RF = U S V^*`` and ``Y[k] = U^* U_H[k] = U_Y S_Y V_Y^*``, the
    combiner is ``W_BB[k] = V S^{-1} U_Y[k]`` so that
    ``W_RF W_BB[k] = U U_Y[k]``. Singular values below ``1e-10 * s_max``
    are dropped (pseudo-inverse) and the result is flagged as degraded.
    """
    u_h = check_matrix_stack(rx_directions, "rx_directions")
    w_rf = check_matrix_stack(w_rf, "w_rf", n_rows=u_h.shape[1])[0]
    k, _, ns = u_h.shape
    l_rx = w_rf.shape[1]
    if l_rx < ns:
        raise ValueError("w_rf needs at least n_streams columns")
    u_w, s_w, vh_w = np.linalg.svd(w_rf, full_matrices=False)
    if s_w[0] <= 0:
        raise ValueError("w_rf is identically zero")
    rank = int(np.sum(s_w > RANK_TOL * s_w[0]))
    degraded = rank < l_rx
    u_w, s_w, v_w = u_w[:, :rank], s_w[:rank], vh_w[:rank].conj().T
    y = np.einsum("rl,krs->kls", u_w.conj(), u_h)
    u_y, _, _ = np.linalg.svd(y, full_matrices=False)
    z = np.zeros((k, rank, ns), dtype=complex)
    z[:, :, : min(rank, ns)] = u_y[:, :, :ns]
    z, _ = fix_phase(z)
    w_bb = np.einsum("lr,r,krs->kls", v_w, 1.0 / s_w, z)
    z_full = np.zeros((k, l_rx, ns), dtype=complex)
    z_full[:, :rank] = z
    return CombinerFactors(w_bb=w_bb, z_w=z_full, rf_rank=rank, degraded=bool(degraded))


def effective_channels(channels, f_rf, v_g, w_rf, w_bb, snr, n_streams):
    """``sqrt(SNR / N_s) (W_RF W_BB[k])^* H[k] F_RF V_G[k]``, shape (K, N_s, N_s)."""
    h = check_channels(channels)
    comb = np.einsum("rl,kls->krs", w_rf, w_bb)
    beams = np.einsum("tl,kls->kts", f_rf, v_g)
    eff = np.einsum("kri,krt,kts->kis", comb.conj(), h, beams, optimize=True)
    return math.sqrt(snr / n_streams) * eff


def finalize_power(channels, f_rf, v_g, weights, w_rf, combiner: CombinerFactors,
                   cfg: SystemConfig, flags=None) -> HybridDesign:
    """Solve the coupled allocation and assemble the hybrid design.

    The baseband precoders are ``F_BB[k] = V_G[k] diag(sqrt(x_k))``.
    """
    h = check_channels(channels, cfg.n_rx, cfg.n_tx)
    eff = effective_channels(h, f_rf, v_g, w_rf, combiner.w_bb, cfg.snr, cfg.n_streams)
    weights = np.array(weights, dtype=float)
    # A beam that radiates nothing has a zero effective column too, so its
    # power stays at zero; any positive weight keeps the polytope bounded.
    dead = weights.max(axis=0) <= 0
    weights[:, dead] = 1.0
    spec = PolytopeSpec(weights, cfg.budget_vector)
    alloc = solve_logdet_ppc(eff, spec)
    x = alloc.powers.reshape(h.shape[0], cfg.n_streams)
    f_bb = v_g * np.sqrt(x)[:, np.newaxis, :]
    flags = dict(flags or {})
    flags["combiner_degraded"] = combiner.degraded
    return HybridDesign(f_rf=f_rf, f_bb=f_bb, w_rf=w_rf, w_bb=combiner.w_bb,
                        allocation=alloc, v_g=v_g, z_w=combiner.z_w, effective=eff,
                        flags=flags)


def design_hybrid(channels, cfg: SystemConfig, all_digital: DigitalDesign = None) -> HybridDesign:
    """Full hybrid pipeline; starts from ``design_ppc_upper`` unless given."""
    h = check_channels(channels, cfg.n_rx, cfg.n_tx)
    if all_digital is None:
        all_digital = design_ppc_upper(h, cfg)
    f_rf = rf_precoder(all_digital, cfg)
    v_g, weights, deficient = bb_precoder_directions(all_digital, f_rf)
    w_rf = rf_combiner(all_digital.rx_directions, cfg)
    comb = bb_combiner(w_rf, all_digital.rx_directions)
    flags = {"deficient_subcarriers": np.flatnonzero(deficient).tolist()}
    return finalize_power(h, f_rf, v_g, weights, w_rf, comb, cfg, flags)
