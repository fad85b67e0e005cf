"""Power-allocation kernels.

Three problems are solved here, all maximizing a rate in bits:

* total-budget waterfilling (closed form),
* the separable allocation ``sum_m log2(1 + g_m x_m)`` over a per-antenna
  polytope ``W x <= b, x >= 0``,
* the coupled allocation ``(1/K) sum_k log2 det(I + H_k diag(x_k) H_k^*)``
  over the same kind of polytope.

The polytope problems share one log-barrier Newton method. The Newton
system has a block-diagonal part (one block per subcarrier) plus the rank
``N_t`` term from the antenna rows, which is handled with the Woodbury
identity so that K * N_s variables cost little more than N_t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AllocationResult",
    "PolytopeSpec",
    "ConvergenceWarning",
    "waterfill_total",
    "solve_separable_ppc",
    "solve_logdet_ppc",
    "logdet_objective",
    "logdet_gradient",
]

LN2 = math.log(2.0)
CONSTRAINT_TOL = 1e-8
KKT_TOL = 1e-6


class ConvergenceWarning(UserWarning):
    """The barrier method hit its iteration cap."""


@dataclass
class AllocationResult:
    """Powers and solver diagnostics.

    ``powers`` is flat with index ``k * n_streams + l`` for the polytope
    solvers; ``multipliers`` are the per-antenna dual variables scaled to
    the reported objective.
    """

    powers: np.ndarray
    objective_bits: float
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    feasible: bool
    converged: bool = True
    info: dict = field(default_factory=dict)


@dataclass
class PolytopeSpec:
    """Feasible set ``weights @ x <= budgets``, ``x >= 0``.

    ``weights`` has one row per antenna and one column per (subcarrier,
    stream) variable. Every column needs a strictly positive entry, else
    that variable would be unbounded.
    """

    weights: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.budgets = np.atleast_1d(np.asarray(self.budgets, dtype=float))
        if self.weights.shape[0] != self.budgets.size:
            raise ValueError("weights needs one row per budget")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(self.budgets < 0) or not np.all(np.isfinite(self.budgets)):
            raise ValueError("budgets must be finite and nonnegative")
        if np.any(self.weights.max(axis=0) <= 0):
            raise ValueError("every column of weights needs a positive entry")

    @property
    def n_vars(self):
        return self.weights.shape[1]

    def slack(self, x):
        return self.budgets - self.weights @ x


def waterfill_total(gains, budget):
    """Maximize ``sum log2(1 + g_i p_i)`` subject to ``sum p_i = budget``.

    The water level comes from the sorted closed form, so the budget is met
    to rounding error.
    """
    g = np.asarray(gains, dtype=float).ravel()
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gains must be finite and nonnegative")
    if not budget > 0:
        raise ValueError("budget must be positive")
    p = np.zeros_like(g)
    # Gains whose reciprocal overflows act as dead channels.
    pos = np.flatnonzero(g > 1.0 / np.finfo(float).max)
    if pos.size == 0:
        return AllocationResult(p, 0.0, np.zeros(1), 0.0, 0, True,
                                info={"water_level": 0.0})
    inv = 1.0 / g[pos]
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    csum = np.cumsum(inv_sorted)
    n = np.arange(1, pos.size + 1)
    levels = (budget + csum) / n
    # Largest active set whose weakest member still sits below the water.
    # The strongest channel is always active, even when budget + 1/g rounds to 1/g.
    live = levels > inv_sorted
    live[0] = True
    n_active = int(np.flatnonzero(live)[-1]) + 1
    mu = levels[n_active - 1]
    p[pos] = np.maximum(mu - inv, 0.0)
    active = p > 0
    if not np.any(active):
        active[pos[order[0]]] = True
    # Remove the rounding drift on the active set.
    p[active] += (budget - p.sum()) / active.sum()
    obj = float(np.sum(np.log2(1.0 + g * p)))
    return AllocationResult(
        powers=p,
        objective_bits=obj,
        multipliers=np.array([1.0 / (LN2 * mu)]),
        kkt_residual=0.0,
        iterations=1,
        feasible=True,
        info={"water_level": float(mu)},
    )


# ---------------------------------------------------------------------------
# log-barrier Newton method over {W x <= b, x >= 0}
# ---------------------------------------------------------------------------

def _block_solve(blocks, rhs):
    """Solve blockdiag(blocks) y = rhs; rhs is (nb, bs) or (nb, bs, m)."""
    if rhs.ndim == 2:
        return np.linalg.solve(blocks, rhs[..., np.newaxis])[..., 0]
    return np.linalg.solve(blocks, rhs)


def _barrier_maximize(oracle, weights, budgets, n_blocks, block_size, active=None, *,
                      t0=1.0, growth=10.0, gap_tol=1e-10, newton_tol=1e-10,
                      max_inner=10_000, max_outer=30):
    """Maximize a concave ``f`` over ``weights @ x <= budgets, x >= 0``.

    ``oracle(x, need_hess)`` returns ``(f, grad, hess_blocks)`` with the
    Hessian given as ``(n_blocks, block_size, block_size)`` blocks (``None``
    entries are fine when ``need_hess`` is false). Variables outside the
    ``active`` mask stay pinned at zero. Rows of ``weights`` without any
    active entry can never bind and are dropped.
    """
    n = n_blocks * block_size
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    W = weights * active[np.newaxis, :]
    rows = np.flatnonzero(W.max(axis=1) > 0)
    W = W[rows]
    b = budgets[rows]
    m_constraints = int(active.sum()) + rows.size
    idle = ~active
    diag_idx = np.arange(block_size)

    x = np.zeros(n)
    x[active] = 0.5 * np.min(b / W.sum(axis=1))
    t = t0
    iterations = 0
    converged = True

    def psi(x_, t_):
        s_ = b - W @ x_
        if np.any(x_[active] <= 0) or np.any(s_ <= 0):
            return math.inf
        return -t_ * oracle(x_, False)[0] - np.sum(np.log(x_[active])) - np.sum(np.log(s_))

    f_val = oracle(x, False)[0]
    for _outer in range(max_outer):
        prev_decrement = math.inf
        while iterations < max_inner:
            f_val, grad, hess = oracle(x, True)
            s = b - W @ x
            xa = np.where(active, x, 1.0)
            g_psi = -t * grad - np.where(active, 1.0 / xa, 0.0) + W.T @ (1.0 / s)
            g_psi[idle] = 0.0
            blocks = -t * hess
            if np.any(idle):
                mask = idle.reshape(n_blocks, block_size)
                keep = ~mask
                blocks = blocks * (keep[:, :, np.newaxis] & keep[:, np.newaxis, :])
                blocks[:, diag_idx, diag_idx] += mask
            blocks[:, diag_idx, diag_idx] += np.where(active, 1.0 / xa**2, 0.0).reshape(
                n_blocks, block_size)
            rhs = -g_psi.reshape(n_blocks, block_size)
            a_inv_r = _block_solve(blocks, rhs).ravel()
            a_inv_wt = _block_solve(blocks, W.T.reshape(n_blocks, block_size, -1)).reshape(n, -1)
            cap = np.diag(s**2) + W @ a_inv_wt
            step = a_inv_r - a_inv_wt @ np.linalg.solve(cap, W @ a_inv_r)
            step[idle] = 0.0
            decrement = -g_psi @ step
            iterations += 1
            if decrement / 2.0 <= newton_tol:
                break
            # Inside the quadratic region a plain Newton step is safe; stop
            # once roundoff keeps the decrement from shrinking.
            quadratic = decrement < 0.25
            if decrement < 1e-6 and decrement >= 0.5 * prev_decrement:
                break
            prev_decrement = decrement if quadratic else math.inf
            alpha = 1.0
            neg = step < 0
            if np.any(neg):
                alpha = min(alpha, 0.99 * np.min(-x[neg] / step[neg]))
            w_step = W @ step
            pos = w_step > 0
            if np.any(pos):
                alpha = min(alpha, 0.99 * np.min(s[pos] / w_step[pos]))
            if not quadratic:
                base = psi(x, t)
                while alpha > 1e-20:
                    if psi(x + alpha * step, t) <= base - 0.25 * alpha * decrement:
                        break
                    alpha *= 0.5
                else:
                    break
            x = x + alpha * step
        if iterations >= max_inner:
            converged = False
            break
        if m_constraints / t <= gap_tol * max(1.0, abs(f_val)):
            break
        t *= growth
    else:
        converged = False

    lam = np.zeros(budgets.size)
    if rows.size:
        # Central-path duals 1/(t s) inherit the roundoff of tiny slacks, so
        # on the binding rows (s < sqrt(b / t)) they get the smallest
        # correction that restores grad + 1/(t x) = W^T lam. W is often rank
        # deficient, hence a correction instead of a fit of lam itself.
        slack = b - W @ x
        lam0 = 1.0 / (t * slack)
        binding = slack < np.sqrt(b / t)
        if np.any(binding):
            grad = oracle(x, True)[1]
            xa = np.where(active, x, 1.0)
            # Variables sitting on their bound carry unreliable 1/(t x) terms.
            free = active & (x > 1.0 / math.sqrt(t))
            target = (grad + 1.0 / (t * xa) - W.T @ lam0)[free]
            delta, *_ = np.linalg.lstsq(W[binding][:, free].T, target, rcond=1e-10)
            lam0[binding] = np.maximum(lam0[binding] + delta, 0.0)
        lam[rows] = lam0
    return x, lam, t, iterations, converged


def _kkt_residual(x, grad, lam, spec, scale):
    """Largest violation of stationarity, complementarity and feasibility.

    ``grad`` and ``lam`` are in the solver's natural-log units; ``scale``
    converts them to the reported objective.
    """
    r = (grad - spec.weights.T @ lam) * scale
    nu = np.maximum(-r, 0.0)
    slack = spec.slack(x)
    budgets = np.where(spec.budgets > 0, spec.budgets, 1.0)
    parts = [
        np.max(np.maximum(r, 0.0), initial=0.0),
        np.max(x * nu, initial=0.0),
        np.max(lam * scale * np.maximum(slack, 0.0) / budgets, initial=0.0),
        np.max(np.maximum(-slack, 0.0) / budgets, initial=0.0),
    ]
    return float(max(parts))


def _pinned(spec):
    """Variables forced to zero by a zero budget on a row they load."""
    zero_rows = spec.budgets <= 0
    return np.any(spec.weights[zero_rows] > 0, axis=0)


def _finish(x_full, grad_full, lam, spec, scale, obj_bits, iterations, converged, info):
    x_full = np.maximum(x_full, 0.0)
    lam = lam.copy()
    # Rows with zero budget have a free multiplier; pick the smallest one
    # that cancels the pull of the variables they pin.
    for i in np.flatnonzero(spec.budgets <= 0):
        loads = spec.weights[i] > 0
        pull = grad_full[loads] - (spec.weights.T @ lam)[loads]
        lam[i] = max(0.0, float(np.max(pull / spec.weights[i, loads])))
    slack = spec.slack(x_full)
    feasible = bool(np.all(slack >= -CONSTRAINT_TOL * np.maximum(spec.budgets, 1.0)))
    kkt = _kkt_residual(x_full, grad_full, lam, spec, scale)
    if not converged:
        warnings.warn("barrier method stopped at its iteration cap", ConvergenceWarning,
                      stacklevel=3)
    return AllocationResult(
        powers=x_full,
        objective_bits=float(obj_bits),
        multipliers=lam * scale,
        kkt_residual=kkt,
        iterations=int(iterations),
        feasible=feasible,
        converged=bool(converged),
        info=info,
    )


def solve_separable_ppc(gains, spec: PolytopeSpec, *, gap_tol=1e-10, max_iter=10_000):
    """Maximize ``sum_m log2(1 + g_m x_m)`` over the per-antenna polytope."""
    g = np.asarray(gains, dtype=float).ravel()
    if g.size != spec.n_vars:
        raise ValueError(f"expected {spec.n_vars} gains, got {g.size}")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gains must be finite and nonnegative")

    active = (g > 0) & ~_pinned(spec)
    x = np.zeros(g.size)
    lam = np.zeros(spec.budgets.size)
    iterations, converged, t = 0, True, math.inf
    if np.any(active):

        def oracle(x_, need_hess):
            gx = 1.0 + g * x_
            f = float(np.sum(np.log(gx)))
            if not need_hess:
                return f, None, None
            return f, g / gx, (-(g / gx) ** 2)[:, np.newaxis, np.newaxis]

        x, lam, t, iterations, converged = _barrier_maximize(
            oracle, spec.weights, spec.budgets, g.size, 1, active,
            gap_tol=gap_tol, max_inner=max_iter)
    grad = g / (1.0 + g * x)
    obj = float(np.sum(np.log1p(g * x))) / LN2
    return _finish(x, grad, lam, spec, 1.0 / LN2, obj, iterations, converged,
                   {"barrier_t": t})


def _check_effective(effective):
    h = np.asarray(effective, dtype=complex)
    if h.ndim == 2:
        h = h[np.newaxis]
    if h.ndim != 3:
        raise ValueError("effective channels must have shape (K, rows, n_streams)")
    if not np.all(np.isfinite(h)):
        raise ValueError("effective channels contain non-finite entries")
    return h


def _logdet_parts(x, h, need_hess):
    """ln det(I + H diag(x) H^*) summed over k, its gradient and Hessian blocks."""
    k, rows, ns = h.shape
    xk = x.reshape(k, ns)
    m = np.eye(rows)[np.newaxis] + np.einsum("kri,ki,ksi->krs", h, xk, h.conj())
    chol = np.linalg.cholesky(m)
    f = 2.0 * float(np.sum(np.log(np.real(np.diagonal(chol, axis1=1, axis2=2)))))
    if not need_hess:
        return f, None, None
    minv_h = np.linalg.solve(m, h)
    gram = np.einsum("kri,krj->kij", h.conj(), minv_h)
    grad = np.real(np.diagonal(gram, axis1=1, axis2=2)).ravel()
    return f, grad, -np.abs(gram) ** 2


def logdet_objective(x, effective):
    """``(1/K) sum_k log2 det(I + H_k diag(x_k) H_k^*)`` in bits."""
    h = _check_effective(effective)
    return _logdet_parts(np.asarray(x, dtype=float), h, False)[0] / (h.shape[0] * LN2)


def logdet_gradient(x, effective):
    """Analytic gradient of :func:`logdet_objective`.

    Entry ``m = k * N_s + l`` equals ``h^* (I + H X H^*)^{-1} h / (K ln 2)``
    with ``h`` the l-th column of ``H_k``.
    """
    h = _check_effective(effective)
    grad = _logdet_parts(np.asarray(x, dtype=float), h, True)[1]
    return grad / (h.shape[0] * LN2)


def solve_logdet_ppc(effective, spec: PolytopeSpec, *, gap_tol=1e-10, max_iter=10_000):
    """Maximize the coupled log-det rate over the per-antenna polytope."""
    h = _check_effective(effective)
    k, _, ns = h.shape
    if k * ns != spec.n_vars:
        raise ValueError(f"spec has {spec.n_vars} columns, effective needs {k * ns}")
    scale = 1.0 / (k * LN2)

    col_energy = np.sum(np.abs(h) ** 2, axis=1).ravel()
    active = (col_energy > 0) & ~_pinned(spec)
    x = np.zeros(k * ns)
    lam = np.zeros(spec.budgets.size)
    iterations, converged, t = 0, True, math.inf
    if np.any(active):
        x, lam, t, iterations, converged = _barrier_maximize(
            lambda x_, need: _logdet_parts(x_, h, need),
            spec.weights, spec.budgets, k, ns, active,
            gap_tol=gap_tol, max_inner=max_iter)
    f_nat, grad, _ = _logdet_parts(x, h, True)
    return _finish(x, grad, lam, spec, scale, f_nat * scale, iterations, converged,
                   {"barrier_t": t})
