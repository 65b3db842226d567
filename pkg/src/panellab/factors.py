"""Principal-components factor extraction, annihilator projections, and the
treatment/factor non-collinearity diagnostic.

Factors follow the normalization F'F/T = I_k with diagonal Lambda'Lambda.
Factor spaces are identified only up to rotation, so comparisons should use
projection matrices rather than raw factor entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .panel import PanelData

__all__ = [
    "FactorModel",
    "Projection",
    "FactorEngineError",
    "principal_factors",
    "annihilator",
    "d_functional",
]


class FactorEngineError(ValueError):
    """Raised on dimension errors or degenerate inputs in the factor kernel."""


@dataclass(frozen=True)
class FactorModel:
    """Rank-k factor model: T x k factors and N x k loadings."""

    factors: np.ndarray
    loadings: np.ndarray
    k: int

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=float)
        lam = np.asarray(self.loadings, dtype=float)
        if f.ndim != 2 or lam.ndim != 2 or f.shape[1] != self.k or lam.shape[1] != self.k:
            raise FactorEngineError("inconsistent factor-model shapes")
        object.__setattr__(self, "factors", f)
        object.__setattr__(self, "loadings", lam)

    def common_component(self) -> np.ndarray:
        """N x T fitted low-rank component Lambda F'."""
        return self.loadings @ self.factors.T


@dataclass(frozen=True)
class Projection:
    """Symmetric idempotent annihilator M_F = I - F(F'F)^{-1}F'."""

    annihilator: np.ndarray

    def apply_rows(self, x: np.ndarray) -> np.ndarray:
        """Apply M_F to each row of an (..., T) array."""
        return x @ self.annihilator


def _sign_fix(f: np.ndarray) -> np.ndarray:
    # each column's largest-magnitude entry made positive
    if f.shape[1] == 0:
        return f
    idx = np.abs(f).argmax(axis=0)
    signs = np.sign(f[idx, np.arange(f.shape[1])])
    signs[signs == 0] = 1.0
    return f * signs


def principal_factors(data: np.ndarray, k: int) -> FactorModel:
    """Best rank-k factor model of an N x T matrix by principal components.

    Returns factors ``F = sqrt(T) * (top-k eigenvectors of Y'Y)`` with
    eigenvalues in descending order, and loadings ``Lambda = Y F / T``.  The
    result minimizes ``sum_i ||Y_i - F lambda_i||^2`` over all rank-k models.
    The eigenproblem is solved on the smaller of the two Gram matrices.

    Raises
    ------
    FactorEngineError
        If ``k > min(N, T)`` or the input is not finite.
    """
    y = np.asarray(data, dtype=float)
    if y.ndim != 2:
        raise FactorEngineError(f"data must be 2-D, got shape {y.shape}")
    if not np.isfinite(y).all():
        raise FactorEngineError("non-finite entries in data")
    n, t = y.shape
    if not 0 <= k <= min(n, t):
        raise FactorEngineError(f"k={k} must be in [0, min(N,T)={min(n, t)}]")
    if k == 0:
        return FactorModel(np.zeros((t, 0)), np.zeros((n, 0)), 0)

    if t <= n:
        gram = y.T @ y
        vals, vecs = scipy.linalg.eigh(gram, subset_by_index=(t - k, t - 1))
        vecs = vecs[:, ::-1]  # descending eigenvalue order
    else:
        gram = y @ y.T
        vals, vecs = scipy.linalg.eigh(gram, subset_by_index=(n - k, n - 1))
        vals, vecs = vals[::-1], vecs[:, ::-1]
        vals = np.clip(vals, 0.0, None)
        if np.any(vals <= 0):
            raise FactorEngineError(
                "rank-deficient data: cannot recover requested factor count"
            )
        vecs = y.T @ (vecs / np.sqrt(vals))

    f = _sign_fix(np.sqrt(t) * vecs)
    lam = y @ f / t
    return FactorModel(f, lam, k)


def annihilator(f: np.ndarray) -> Projection:
    """Annihilator M_F = I - F(F'F)^{-1}F' of the column space of F.

    An empty F yields the identity.  F must have full column rank; a
    rank-deficient input signals a degenerate factor estimate and raises.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2:
        raise FactorEngineError("F must be 2-D")
    t, k = f.shape
    if k == 0:
        return Projection(np.eye(t))
    gram = f.T @ f
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise FactorEngineError(f"rank-deficient F (cond(F'F)={cond:.3g})")
    m = np.eye(t) - f @ np.linalg.solve(gram, f.T)
    return Projection((m + m.T) / 2.0)


def d_functional(f: np.ndarray, panel: PanelData, loadings: np.ndarray) -> float:
    """Non-collinearity of the treatment block with the span of F.

    Evaluates
    ``(1/NT) sum_i D_i' M_F D_i
    - (1/N^2 T) sum_{i,j} D_i' M_F D_j * lam_i' (Lambda'Lambda/N)^{-1} lam_j``
    using the rank-one structure ``D_i = d_i * d`` of block treatment, which
    factorizes the double sum into
    ``(d' M_F d / T) * [N1/N - s'(Lambda'Lambda/N)^{-1} s / N^2]`` with
    ``s = sum_{i treated} lam_i``.  Cost is O(NT + N k^2) instead of the
    naive O(N^2 T) pairwise evaluation.

    A value near zero means the fitted factors nearly absorb the treatment
    indicator, leaving the treatment coefficient unidentified.
    """
    f = np.asarray(f, dtype=float)
    lam = np.asarray(loadings, dtype=float)
    n, t = panel.n, panel.t
    if f.shape[0] != t:
        raise FactorEngineError(f"F has {f.shape[0]} rows, expected T={t}")
    if lam.shape != (n, f.shape[1]):
        raise FactorEngineError(
            f"loadings shape {lam.shape} incompatible with N={n}, k={f.shape[1]}"
        )
    d = panel.post_flags().astype(float)
    proj = annihilator(f)
    md = proj.annihilator @ d
    a = float(d @ md) / t

    k = f.shape[1]
    if k == 0:
        b = panel.n1 / n
    else:
        lam_gram = lam.T @ lam / n
        cond = np.linalg.cond(lam_gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise FactorEngineError(
                f"singular loading Gram (cond={cond:.3g})"
            )
        s = lam[panel.treated_index].sum(axis=0)
        b = panel.n1 / n - float(s @ np.linalg.solve(lam_gram, s)) / n**2
    return a * b
