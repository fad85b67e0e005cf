"""Input validation and small linear-algebra helpers shared by all modules."""

import numpy as np

PHASE_EPS = 1e-12


def check_channels(channels, n_rx=None, n_tx=None, name="channels"):
    """Return ``channels`` as a complex array of shape (K, n_rx, n_tx).

    A single 2-D matrix is promoted to K = 1.
    """
    arr = np.asarray(getattr(channels, "freq", channels))
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (K, n_rx, n_tx), got {arr.shape}")
    if n_rx is not None and arr.shape[1] != n_rx:
        raise ValueError(f"{name} has {arr.shape[1]} rows, expected {n_rx}")
    if n_tx is not None and arr.shape[2] != n_tx:
        raise ValueError(f"{name} has {arr.shape[2]} columns, expected {n_tx}")
    arr = arr.astype(complex, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matrix_stack(mats, name, n_rows=None, n_cols=None, n_mats=None):
    arr = np.asarray(mats)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a stack of matrices, got shape {arr.shape}")
    if n_mats is not None and arr.shape[0] != n_mats:
        raise ValueError(f"{name} has {arr.shape[0]} matrices, expected {n_mats}")
    if n_rows is not None and arr.shape[1] != n_rows:
        raise ValueError(f"{name} has {arr.shape[1]} rows, expected {n_rows}")
    if n_cols is not None and arr.shape[2] != n_cols:
        raise ValueError(f"{name} has {arr.shape[2]} columns, expected {n_cols}")
    arr = arr.astype(complex, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def fix_phase(vecs):
    """Rotate each column so its first non-negligible entry is real and >= 0.

    Works on a single matrix or a stack (..., n, d). Returns the rotated
    copy and the unit-modulus phase factors that were applied.
    """
    vecs = np.asarray(vecs, dtype=complex)
    mags = np.abs(vecs)
    first = np.argmax(mags > PHASE_EPS, axis=-2)
    pivot = np.take_along_axis(vecs, first[..., np.newaxis, :], axis=-2)[..., 0, :]
    pmag = np.abs(pivot)
    rot = np.where(pmag > PHASE_EPS, np.conj(pivot) / np.where(pmag > 0, pmag, 1.0), 1.0)
    return vecs * rot[..., np.newaxis, :], rot


def eigh_desc(mat, n=None):
    """Eigenpairs of a Hermitian matrix, eigenvalues descending.

    Ties keep the ascending-index order of ``numpy.linalg.eigh`` reversed
    through a stable sort, and the phase convention of :func:`fix_phase`
    is applied to the eigenvectors.
    """
    mat = np.asarray(mat, dtype=complex)
    mat = 0.5 * (mat + mat.conj().T)
    vals, vecs = np.linalg.eigh(mat)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if n is not None:
        vals, vecs = vals[:n], vecs[:, :n]
    vecs, _ = fix_phase(vecs)
    return vals, vecs


def orthonormalize(a):
    """Orthonormal basis of the column space of ``a`` (same shape)."""
    q, r = np.linalg.qr(np.asarray(a, dtype=complex))
    d = np.diagonal(r)
    signs = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    return q * signs[np.newaxis, :]


def is_semi_unitary(a, tol=1e-8):
    a = np.asarray(a)
    gram = a.conj().T @ a
    return np.max(np.abs(gram - np.eye(a.shape[1]))) <= tol
