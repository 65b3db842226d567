"""Interactive fixed effects estimation by alternating least squares.

The estimator jointly minimizes
``SSE(beta, F) = sum_i (Y_i - X_i beta)' M_F (Y_i - X_i beta)``
over the effect coefficients and a rank-k factor space.  The static
specification uses the single treatment dummy as regressor; the dynamic one
uses one dummy per post-treatment period.  Either may add observed
covariates, whose coefficients are solved jointly in the regression step.

Both alternation steps minimize the same objective, so the SSE path is
non-increasing.  Because the objective can have several local minima when
treatment-effect heterogeneity is itself factor-structured, fits run from
multiple starting points and keep the best SSE; the non-collinearity
diagnostic ``d_of_F`` flags runs where the fitted factors nearly absorb the
treatment indicator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factors import FactorModel, annihilator, d_functional, principal_factors
from .panel import AttEstimate, PanelData, treatment_mask

__all__ = ["IfeConfig", "IfeResult", "fit_static", "fit_dynamic", "fit_ife", "sse"]

DEGENERATE_SCALE = 1e-8  # projected treatment sum-of-squares threshold, times N*T


@dataclass
class IfeConfig:
    """Iteration controls for the alternating minimization."""

    k: int = 1
    spec: str = "static"
    max_iters: int = 1000
    tol: float = 1e-9
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.spec not in ("static", "dynamic"):
            raise ValueError(f"spec must be 'static' or 'dynamic', got {self.spec!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class IfeResult(AttEstimate):
    """ATT estimate plus the fitted factor structure and solver state."""

    factor_model: FactorModel | None = None
    sse: float = np.nan
    d_of_F: float = np.nan
    converged: bool = False
    coef_covariates: np.ndarray | None = None
    iterations: int = 0
    sse_path: list = field(default_factory=list, repr=False)


def _did_estimate(panel: PanelData) -> float:
    y = panel.outcomes
    tr, co = panel.treated_index, panel.control_index
    t0 = panel.t0
    return float(
        (y[tr, t0:].mean() - y[tr, :t0].mean())
        - (y[co, t0:].mean() - y[co, :t0].mean())
    )


def _effect_matrix(panel: PanelData, coef: np.ndarray, n_treat_coef: int) -> np.ndarray:
    """N x T matrix of fitted effects implied by treatment coefficients."""
    out = np.zeros((panel.n, panel.t))
    if n_treat_coef == 1:
        out[panel.treated_index, panel.t0:] = coef[0]
    else:
        out[np.ix_(panel.treated_index, np.arange(panel.t0, panel.t))] = coef[:n_treat_coef]
    return out


def _residualize(panel: PanelData, coef: np.ndarray, n_treat_coef: int) -> np.ndarray:
    w = panel.outcomes - _effect_matrix(panel, coef, n_treat_coef)
    for j, z in enumerate(panel.covariates):
        w = w - coef[n_treat_coef + j] * z
    return w


def _regression_step(panel, f, coef_prev, dynamic):
    """Least squares of M_F-projected outcomes on M_F-projected regressors.

    Exploits the block structure of the treatment regressors: for the static
    dummy, ``D_i = d_i * d`` makes every projected cross-moment a multiple of
    ``M_F d``; for the dynamic dummies, the Gram block is ``N1`` times the
    post-period submatrix of ``M_F``.  Returns the coefficient vector and a
    degeneracy flag (projected treatment variance below threshold, in which
    case the previous coefficients are kept).
    """
    y = panel.outcomes
    tr = panel.treated_index
    t0, t, n = panel.t0, panel.t, panel.n
    n1, t1 = panel.n1, panel.t1
    k = f.shape[1]
    p = len(panel.covariates)
    n_treat = t1 if dynamic else 1
    c = n_treat + p

    def project_rows(x):
        if k == 0:
            return x
        return x - (x @ f) @ (f.T / t)

    d = np.zeros(t)
    d[t0:] = 1.0
    md = d if k == 0 else d - f @ (f.T @ d) / t

    gram = np.zeros((c, c))
    rhs = np.zeros(c)
    if dynamic:
        f_post = f[t0:, :]
        m_pp = np.eye(t1) - f_post @ f_post.T / t
        gram[:t1, :t1] = n1 * m_pp
        y_tr = y[tr]
        my_tr = project_rows(y_tr)
        rhs[:t1] = my_tr[:, t0:].sum(axis=0)
        ss_treat = n1 * float(np.diag(m_pp).min())
    else:
        gram[0, 0] = n1 * float(d @ md)
        rhs[0] = float((y[tr] @ md).sum())
        ss_treat = gram[0, 0]

    for j, z in enumerate(panel.covariates):
        mzj = project_rows(z)
        col = n_treat + j
        rhs[col] = float(np.einsum("nt,nt->", mzj, y))
        if dynamic:
            gram[:t1, col] = mzj[tr][:, t0:].sum(axis=0)
        else:
            gram[0, col] = float((z[tr] @ md).sum())
        gram[col, :n_treat] = gram[:n_treat, col]
        for j2 in range(j + 1):
            val = float(np.einsum("nt,nt->", mzj, panel.covariates[j2]))
            gram[col, n_treat + j2] = val
            gram[n_treat + j2, col] = val

    if ss_treat < DEGENERATE_SCALE * n * t:
        return coef_prev.copy(), True
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        coef, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    return coef, False


def _alternate(panel, k, dynamic, coef0, max_iters, tol):
    """Run the two-step alternation from one starting point."""
    n_treat = panel.t1 if dynamic else 1
    coef = np.asarray(coef0, dtype=float)
    w = _residualize(panel, coef, n_treat)
    fm = principal_factors(w, k)
    sse_val = _sse_of_residual(w, fm.factors)
    sse_path = [sse_val]
    converged = False
    degenerate = False
    it = 0
    for it in range(1, max_iters + 1):
        new_coef, degen_step = _regression_step(panel, fm.factors, coef, dynamic)
        degenerate = degenerate or degen_step
        w = _residualize(panel, new_coef, n_treat)
        fm = principal_factors(w, k)
        new_sse = _sse_of_residual(w, fm.factors)
        sse_path.append(new_sse)
        rel = abs(sse_val - new_sse) / max(sse_val, 1e-300)
        step = float(np.max(np.abs(new_coef - coef)))
        coef, sse_val = new_coef, new_sse
        # the coefficient-step condition keeps one extra alternation from
        # moving the estimate by more than 10*tol after reported convergence
        if rel < tol and step < 5.0 * tol:
            converged = True
            break
    return coef, fm, sse_val, converged, it, sse_path, degenerate


def _sse_of_residual(w: np.ndarray, f: np.ndarray) -> float:
    total = float(np.einsum("nt,nt->", w, w))
    if f.shape[1] == 0:
        return total
    wf = w @ f
    return total - float(np.einsum("nk,nk->", wf, wf)) / f.shape[0]


def fit_ife(panel: PanelData, cfg: IfeConfig) -> IfeResult:
    """Fit the interactive fixed effects model per the configured spec.

    Runs ``cfg.restarts`` alternations: the first warm-starts from principal
    components of the raw outcomes (zero initial coefficients); the rest draw
    the initial treatment coefficient uniformly from the naive
    difference-in-differences estimate plus/minus two outcome standard
    deviations.  The restart with the lowest final SSE wins.

    Non-convergence within ``max_iters`` is reported through
    ``converged=False``, never raised.  A near-collinear projected treatment
    regressor sets the ``degenerate_design`` diagnostic and freezes the
    coefficient for that step, so degenerate runs stay observable.
    """
    if cfg.k > min(panel.n, panel.t):
        raise ValueError(f"k={cfg.k} exceeds min(N, T)={min(panel.n, panel.t)}")
    dynamic = cfg.spec == "dynamic"
    n_treat = panel.t1 if dynamic else 1
    p = len(panel.covariates)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    did = _did_estimate(panel)
    spread = 2.0 * float(panel.outcomes.std())

    starts = [np.zeros(n_treat + p)]
    for _ in range(cfg.restarts - 1):
        a0 = rng.uniform(did - spread, did + spread)
        coef0 = np.zeros(n_treat + p)
        coef0[:n_treat] = a0
        starts.append(coef0)

    best = None
    n_converged = 0
    for coef0 in starts:
        out = _alternate(panel, cfg.k, dynamic, coef0, cfg.max_iters, cfg.tol)
        n_converged += int(out[3])
        if best is None or out[2] < best[2]:
            best = out
    coef, fm, sse_val, converged, iters, sse_path, degenerate = best

    fitted = fm.common_component()
    for j, z in enumerate(panel.covariates):
        fitted = fitted + coef[n_treat + j] * z
    tr = panel.treated_index
    pre_resid = (panel.outcomes - fitted)[tr][:, : panel.t0]
    pre_mspe = float((pre_resid**2).mean())
    d_val = float(d_functional(fm.factors, panel, fm.loadings))

    per_period = coef[:n_treat].copy() if dynamic else None
    att = float(coef[:n_treat].mean())
    diagnostics = {
        "d_of_F": d_val,
        "iterations": float(iters),
        "sse": float(sse_val),
        "converged": float(converged),
        "pre_mspe": pre_mspe,
        "degenerate_design": float(degenerate),
        "restarts_converged": float(n_converged),
    }
    return IfeResult(
        att=att,
        per_period=per_period,
        counterfactuals=fitted[tr][:, panel.t0:],
        diagnostics=diagnostics,
        factor_model=fm,
        sse=float(sse_val),
        d_of_F=d_val,
        converged=bool(converged),
        coef_covariates=coef[n_treat:].copy() if p else None,
        iterations=iters,
        sse_path=sse_path,
    )


def fit_static(panel: PanelData, cfg: IfeConfig | None = None, **kwargs) -> IfeResult:
    """Static specification: a single coefficient on the treatment dummy."""
    cfg = _with_spec(cfg, "static", kwargs)
    return fit_ife(panel, cfg)


def fit_dynamic(panel: PanelData, cfg: IfeConfig | None = None, **kwargs) -> IfeResult:
    """Dynamic specification: one coefficient per post-treatment period."""
    cfg = _with_spec(cfg, "dynamic", kwargs)
    return fit_ife(panel, cfg)


def _with_spec(cfg, spec, kwargs):
    if cfg is None:
        cfg = IfeConfig(spec=spec, **kwargs)
    else:
        cfg = IfeConfig(
            k=cfg.k,
            spec=spec,
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            restarts=cfg.restarts,
            seed=cfg.seed,
        )
    return cfg


def sse(panel: PanelData, alpha: float, f: np.ndarray) -> float:
    """Evaluate ``sum_i (Y_i - alpha D_i)' M_F (Y_i - alpha D_i)`` exactly."""
    w = panel.outcomes - alpha * treatment_mask(panel)
    m = annihilator(np.asarray(f, dtype=float)).annihilator
    return float(np.einsum("nt,nt->", w @ m, w))
