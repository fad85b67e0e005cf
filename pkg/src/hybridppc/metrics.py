"""Link-level evaluation metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_channels, check_matrix_stack, eigh_desc, is_semi_unitary, orthonormalize

__all__ = [
    "TrialMetrics",
    "DegradedCombinerWarning",
    "spectral_efficiency",
    "per_antenna_power",
    "chordal_distance",
    "subspace_bases",
    "subspace_quality",
    "empirical_ccdf",
    "ccdf_grid",
]

WHITEN_TOL = 1e-10


class DegradedCombinerWarning(UserWarning):
    """A combiner was numerically rank deficient and got pseudo-inverted."""


@dataclass
class TrialMetrics:
    rate_bits: float
    antenna_powers: np.ndarray
    gamma: float = float("nan")
    chordal_tx: np.ndarray = None
    chordal_rx: np.ndarray = None

    @property
    def max_antenna_power(self):
        return float(np.max(self.antenna_powers))


def _whitened_singular_values(h, f, w):
    """Singular values of ``(W^* W)^{-1/2} W^* H F`` for every subcarrier."""
    gram = np.einsum("krs,krt->kst", w.conj(), w)
    m = np.einsum("krs,krt,ktl->ksl", w.conj(), h, f, optimize=True)
    try:
        chol = np.linalg.cholesky(gram)
        white = np.linalg.solve(chol, m)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None or not np.all(np.isfinite(white)):
        white = _pinv_whiten(gram, m)
    return np.linalg.svd(white, compute_uv=False)


def _pinv_whiten(gram, m):
    vals, vecs = np.linalg.eigh(gram)
    top = vals.max(axis=1, keepdims=True)
    keep = vals > WHITEN_TOL * np.maximum(top, np.finfo(float).tiny)
    if not np.all(keep):
        warnings.warn("combiner Gram matrix is singular; using a pseudo-inverse",
                      DegradedCombinerWarning, stacklevel=4)
    inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, vals, 1.0)), 0.0)
    # diag(inv_sqrt) V^* M has the singular values of gram^{-1/2} M.
    return inv_sqrt[:, :, np.newaxis] * np.einsum("ksq,ksl->kql", vecs.conj(), m)


def spectral_efficiency(channels, precoders, combiners, snr, n_streams):
    """Average rate in bits/s/Hz with noise whitening at the receiver.

    ``(1/K) sum_k log2 det(I + (SNR/N_s) (W^*W)^{-1} W^* H F F^* H^* W)``,
    evaluated through the singular values of ``L^{-1} W^* H F`` with
    ``L L^* = W^* W``. ``snr`` is linear.

    Parameters
    ----------
    channels : array_like, shape (K, N_r, N_t)
    precoders : array_like, shape (K, N_t, N_s)
    combiners : array_like, shape (K, N_r, N_s)
    snr : float
    n_streams : int
    """
    h = check_channels(channels)
    k, n_rx, n_tx = h.shape
    f = check_matrix_stack(precoders, "precoders", n_mats=k, n_rows=n_tx)
    w = check_matrix_stack(combiners, "combiners", n_mats=k, n_rows=n_rx)
    if not (snr >= 0 and math.isfinite(snr)):
        raise ValueError("snr must be finite and nonnegative")
    if n_streams < 1:
        raise ValueError("n_streams must be positive")
    s = _whitened_singular_values(h, f, w)
    return float(np.sum(np.log2(1.0 + (snr / n_streams) * s**2)) / k)


def per_antenna_power(precoders, n_streams):
    """``(1/N_s) sum_k ||row_j F[k]||^2`` for every transmit antenna."""
    f = check_matrix_stack(precoders, "precoders")
    if n_streams < 1:
        raise ValueError("n_streams must be positive")
    return np.sum(np.abs(f) ** 2, axis=(0, 2)) / n_streams


def chordal_distance(a, b):
    """Grassmannian chordal distance ``sqrt(d - ||A^* B||_F^2)``.

    Bases that are not orthonormal within 1e-8 are orthonormalized first.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim == 1:
        a = a[:, np.newaxis]
    if b.ndim == 1:
        b = b[:, np.newaxis]
    if a.shape != b.shape:
        raise ValueError(f"basis shapes differ: {a.shape} vs {b.shape}")
    if not is_semi_unitary(a):
        a = orthonormalize(a)
    if not is_semi_unitary(b):
        b = orthonormalize(b)
    # d - ||A^* B||^2 = ||B - A A^* B||^2 avoids the cancellation.
    return float(np.linalg.norm(b - a @ (a.conj().T @ b)))


def subspace_bases(channels, rank, d=None):
    """Receive/transmit bases from the aggregated channel singular spaces.

    The per-subcarrier singular vectors of rank ``rank`` are summed into
    ``S = sum_k U_k U_k^*`` and ``T = sum_k V_k V_k^*``; the first ``d``
    eigenvectors (default ``rank``) of each are returned as ``(U_S, U_T)``.
    Taking ``d`` leading columns of one decomposition gives nested bases.
    """
    h = check_channels(channels)
    if not 1 <= rank <= min(h.shape[1:]):
        raise ValueError(f"rank must lie in [1, {min(h.shape[1:])}]")
    d = rank if d is None else d
    if not 1 <= d <= min(h.shape[1:]):
        raise ValueError(f"d must lie in [1, {min(h.shape[1:])}]")
    u, _, vh = np.linalg.svd(h, full_matrices=False)
    u = u[..., :rank]
    v = np.conj(np.swapaxes(vh, -1, -2))[..., :rank]
    _, u_s = eigh_desc(np.einsum("kir,kjr->ij", u, u.conj()), d)
    _, u_t = eigh_desc(np.einsum("kir,kjr->ij", v, v.conj()), d)
    return u_s, u_t


def subspace_quality(channels, u_s, u_t, d=None):
    """Captured channel energy ``sum_k ||U_S^* H[k] U_T||^2 / sum_k ||H[k]||^2``.

    Only the first ``d`` columns of the bases are used when ``d`` is given.
    """
    h = check_channels(channels)
    u_s = np.asarray(u_s, dtype=complex)
    u_t = np.asarray(u_t, dtype=complex)
    if u_s.ndim == 1:
        u_s = u_s[:, np.newaxis]
    if u_t.ndim == 1:
        u_t = u_t[:, np.newaxis]
    if d is not None:
        if not 1 <= d <= min(u_s.shape[1], u_t.shape[1]):
            raise ValueError("d exceeds the number of basis columns")
        u_s, u_t = u_s[:, :d], u_t[:, :d]
    if u_s.shape[0] != h.shape[1] or u_t.shape[0] != h.shape[2]:
        raise ValueError("basis dimensions do not match the channel")
    total = float(np.sum(np.abs(h) ** 2))
    if total <= 0:
        raise ValueError("channel energy is zero; quality is undefined")
    captured = np.einsum("ri,krt,tj->kij", u_s.conj(), h, u_t, optimize=True)
    return float(min(np.sum(np.abs(captured) ** 2) / total, 1.0))


def empirical_ccdf(samples, grid):
    """Fraction of samples strictly above each grid value."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    g = np.asarray(grid, dtype=float)
    return 1.0 - np.searchsorted(x, g, side="right") / x.size


def ccdf_grid(budgets, n_points=512):
    """Uniform grid on ``[0, 1.5 max(budgets)]``."""
    return np.linspace(0.0, 1.5 * float(np.max(budgets)), n_points)
