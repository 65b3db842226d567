"""Least squares over the probability simplex.

Solves ``min_w w'Gw - 2b'w + const`` subject to ``w >= 0, sum(w) = 1`` by
accelerated projected gradient descent with adaptive restarts, stopping on the
Frank-Wolfe duality gap.  Multiple right-hand sides sharing the same Gram
matrix are solved in one batched run (one column per problem), which is the
shape synthetic-control fits naturally produce: one weight vector per treated
unit against a common donor pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = ["project_simplex", "SimplexSolution", "solve_simplex_lsq"]


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of ``v`` onto the unit simplex."""
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    n = v.shape[0]
    u = -np.sort(-v, axis=0)
    css = (np.cumsum(u, axis=0) - 1.0) / np.arange(1, n + 1)[:, None]
    # largest index where the sorted value still exceeds the running threshold
    rho = n - 1 - (u > css)[::-1].argmax(axis=0)
    tau = np.take_along_axis(css, rho[None, :], axis=0)
    w = np.clip(v - tau, 0.0, None)
    return w[:, 0] if squeeze else w


@dataclass
class SimplexSolution:
    """Weights plus solver telemetry for a batch of simplex problems."""

    weights: np.ndarray  # (n, m): one column per right-hand side
    objective: np.ndarray  # (m,)
    gap: np.ndarray  # (m,) final Frank-Wolfe gaps
    iterations: int
    converged: bool


def solve_simplex_lsq(
    design: np.ndarray,
    targets: np.ndarray,
    ridge: float = 0.0,
    tol: float = 1e-10,
    max_iters: int = 20_000,
) -> SimplexSolution:
    """Simplex-constrained least squares ``min ||c - Bw||^2 + ridge ||w||^2``.

    Parameters
    ----------
    design : ndarray, shape (rows, n)
        Matrix ``B``; column ``j`` is one candidate component.
    targets : ndarray, shape (rows,) or (rows, m)
        One target vector per problem; all problems share ``B``.
    ridge : float
        Coefficient on the squared-norm penalty (>= 0).
    tol : float
        Stop once every problem's Frank-Wolfe gap is below
        ``tol * (1 + |objective|)``.
    max_iters : int
        Iteration cap; the solution reports ``converged=False`` if hit.
    """
    b_mat = np.asarray(design, dtype=float)
    c = np.asarray(targets, dtype=float)
    single = c.ndim == 1
    if single:
        c = c[:, None]
    n = b_mat.shape[1]
    m = c.shape[1]
    if n == 1:
        w = np.ones((1, m))
        resid = c - b_mat @ w
        obj = (resid**2).sum(axis=0) + ridge
        return SimplexSolution(w[:, 0] if single else w, obj, np.zeros(m), 0, True)

    gram = b_mat.T @ b_mat
    rhs = b_mat.T @ c
    const = (c**2).sum(axis=0)
    lam_max = float(
        scipy.linalg.eigh(gram, eigvals_only=True, subset_by_index=(n - 1, n - 1))[0]
    )
    lam_max = max(lam_max, 0.0)
    lipschitz = 2.0 * (lam_max + ridge)
    if lipschitz <= 0:
        w = np.full((n, m), 1.0 / n)
        return SimplexSolution(w[:, 0] if single else w, const.copy(), np.zeros(m), 0, True)
    step = 1.0 / lipschitz

    def grad_and_obj(w):
        gw = gram @ w + ridge * w
        grad = 2.0 * (gw - rhs)
        obj = (w * gw).sum(axis=0) - 2.0 * (rhs * w).sum(axis=0) + const
        return grad, obj

    def refine(w):
        # exact equality-constrained solve on each column's active support;
        # accepted only when feasible, so this can only improve the iterate
        for j in range(m):
            support = np.flatnonzero(w[:, j] > 1e-12)
            if support.size == 0 or support.size > rhs.shape[0] + 1:
                continue
            k = support.size
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = 2.0 * (gram[np.ix_(support, support)] + ridge * np.eye(k))
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            vec = np.concatenate([2.0 * rhs[support, j], [1.0]])
            try:
                sol = np.linalg.solve(kkt, vec)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, vec, rcond=None)
            cand = sol[:k]
            if cand.min() >= 0.0 and abs(cand.sum() - 1.0) < 1e-9:
                full = np.zeros(n)
                full[support] = cand
                gw = gram @ full + ridge * full
                if (full @ gw - 2.0 * full @ rhs[:, j]) <= (
                    w[:, j] @ (gram @ w[:, j] + ridge * w[:, j])
                    - 2.0 * w[:, j] @ rhs[:, j]
                ) + 1e-15:
                    w[:, j] = full
        return w

    w = np.full((n, m), 1.0 / n)
    v = w.copy()
    theta = np.ones(m)
    _, f_prev = grad_and_obj(w)
    gaps = np.full(m, np.inf)
    iters = 0
    converged = False
    for iters in range(1, max_iters + 1):
        grad_v = 2.0 * (gram @ v + ridge * v - rhs)
        w_new = project_simplex(v - step * grad_v)
        if iters % 25 == 0:
            w_new = refine(w_new)
        grad, f_new = grad_and_obj(w_new)
        gaps = (grad * w_new).sum(axis=0) - grad.min(axis=0)
        if np.all(gaps <= tol * (1.0 + np.abs(f_new))):
            w = w_new
            converged = True
            break
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta**2))
        momentum = (theta - 1.0) / theta_new
        v = w_new + momentum * (w_new - w)
        # restart momentum on columns where the objective went up
        worse = f_new > f_prev
        if worse.any():
            v[:, worse] = w_new[:, worse]
            theta_new[worse] = 1.0
        theta = theta_new
        w, f_prev = w_new, f_new
    _, obj = grad_and_obj(w)
    return SimplexSolution(w[:, 0] if single else w, obj, gaps, iters, converged)
