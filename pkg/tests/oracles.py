"""Independent reference solutions used by the tests.

Nothing here imports the package's solvers. The grid oracle only needs an
objective that is concave and nondecreasing in every variable, which holds
for both rate functions. For such objectives the best point with the first
``n - 1`` coordinates fixed puts the last coordinate on the boundary of the
polytope, and the resulting reduced function is concave, so repeated grid
zooming converges to the true maximum from below.
"""

import itertools
import math

import numpy as np


def separable_rate(gains):
    g = np.asarray(gains, dtype=float)

    def f(x):
        return np.sum(np.log2(1.0 + x * g), axis=-1)

    return f


def logdet_rate(effective):
    """Vectorized ``(1/K) sum_k log2 det(I + H_k diag(x_k) H_k^*)`` over rows of ``x``."""
    h = np.asarray(effective, dtype=complex)
    k, rows, ns = h.shape

    def f(x):
        x = np.atleast_2d(x)
        xk = x.reshape(x.shape[0], k, ns)
        m = np.eye(rows) + np.einsum("kri,pki,ksi->pkrs", h, xk, h.conj())
        _, logdet = np.linalg.slogdet(m)
        return logdet.sum(axis=1) / (k * math.log(2.0))

    return f


def _last_coordinate(points, weights, budgets):
    """Largest feasible last coordinate for every row of ``points`` (or -1)."""
    used = points @ weights[:, :-1].T
    room = budgets[np.newaxis, :] - used
    w_last = weights[:, -1]
    with np.errstate(divide="ignore"):
        caps = np.where(w_last > 0, room / np.where(w_last > 0, w_last, 1.0), np.inf)
    last = caps.min(axis=1)
    infeasible = np.any(room < -1e-15, axis=1) | (last < 0)
    return np.where(infeasible, -1.0, np.maximum(last, 0.0))


def grid_oracle(objective, weights, budgets, n_points=21, levels=30, shrink=0.5):
    """Maximize ``objective`` over ``weights @ x <= budgets, x >= 0`` by zoomed grids.

    Returns ``(best_value, best_x)``. Every evaluated point is feasible, so
    the value is a lower bound on the true maximum.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    b = np.asarray(budgets, dtype=float)
    n = w.shape[1]
    with np.errstate(divide="ignore"):
        upper = np.min(np.where(w > 0, b[:, np.newaxis] / np.where(w > 0, w, 1.0), np.inf), axis=0)
    if n == 1:
        x = np.array([upper[0]])
        return float(objective(x[np.newaxis])[0]), x

    lo = np.zeros(n - 1)
    hi = upper[:-1].copy()
    best_val, best_x = -np.inf, None
    for _ in range(levels):
        axes = [np.linspace(lo[i], hi[i], n_points) for i in range(n - 1)]
        pts = np.array(list(itertools.product(*axes)))
        last = _last_coordinate(pts, w, b)
        ok = last >= 0
        full = np.concatenate([pts[ok], last[ok, np.newaxis]], axis=1)
        vals = objective(full)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_x = float(vals[i]), full[i]
        width = (hi - lo) * shrink
        centre = best_x[:-1]
        lo = np.maximum(centre - width / 2, 0.0)
        hi = np.minimum(centre + width / 2, upper[:-1])
    return best_val, best_x


def waterfill_bruteforce(gains, budget):
    """Total-budget waterfilling by enumerating active sets.

    For each candidate active set (the strongest ``n`` channels) the level
    ``mu = (budget + sum 1/g) / n`` is accepted when it is above every
    active ``1/g`` and below every inactive one.
    """
    g = np.asarray(gains, dtype=float)
    order = np.argsort(-g)
    for n in range(len(g), 0, -1):
        act = order[:n]
        if np.any(g[act] <= 0):
            continue
        mu = (budget + np.sum(1.0 / g[act])) / n
        inactive = order[n:]
        if np.all(mu > 1.0 / g[act]) and np.all(mu <= 1.0 / np.where(g[inactive] > 0, g[inactive], 1e-300)):
            p = np.zeros_like(g)
            p[act] = mu - 1.0 / g[act]
            return p, mu
    raise AssertionError("no consistent active set")


def real_embedding(m):
    """Real symmetric embedding of a complex Hermitian matrix."""
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def cvx_logdet(effective, weights, budgets):
    """Reference optimum of the log-det problem from cvxpy (test-only)."""
    import cvxpy as cp

    h = np.asarray(effective, dtype=complex)
    k, rows, ns = h.shape
    x = cp.Variable(k * ns, nonneg=True)
    terms = []
    for kk in range(k):
        m = np.eye(2 * rows)
        for l in range(ns):
            col = h[kk][:, l:l + 1]
            m = m + x[kk * ns + l] * real_embedding(col @ col.conj().T)
        # det of the real embedding is |det|^2 of the complex matrix.
        terms.append(0.5 * cp.log_det(m))
    prob = cp.Problem(cp.Maximize(sum(terms) / (k * math.log(2.0))),
                      [np.asarray(weights) @ x <= np.asarray(budgets)])
    prob.solve()
    return float(prob.value), np.asarray(x.value)
