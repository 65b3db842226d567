"""Counterfactual-imputation estimators: SC, DSC, GSC, and SDiD.

None of these estimators ever touch treated-unit outcomes from post-treatment
periods when estimating weights, factors, or loadings; treated post outcomes
enter only through the final gap ``y - yhat(0)``.  That structural property
is what makes the family robust to factor-structured treatment-effect
heterogeneity, and it is enforced here by construction: every fit reads the
control block and the treated pre-treatment block only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import principal_factors
from .panel import AttEstimate, PanelData
from .simplex import solve_simplex_lsq

__all__ = [
    "ScWeights",
    "ImputationResult",
    "fit_sc",
    "fit_dsc",
    "fit_gsc",
    "fit_sdid",
    "impute_att",
    "sdid_regularization",
]


@dataclass(frozen=True)
class ScWeights:
    """Donor weights: one column per treated unit (or a single shared column).

    Every column lies on the probability simplex.  ``intercept`` holds the
    per-treated-unit level shift used by demeaned variants, or None.
    """

    weights: np.ndarray
    donor_index: np.ndarray
    intercept: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        object.__setattr__(self, "weights", w)
        if (w < -1e-8).any():
            raise ValueError("negative synthetic-control weight")
        sums = w.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-8:
            raise ValueError(f"weight columns must sum to 1, got {sums}")


@dataclass
class ImputationResult(AttEstimate):
    """ATT from imputed counterfactuals, with pre/post fit quality."""

    method: str = ""
    pre_mspe: float = np.nan
    post_mspe: float = np.nan
    weights: ScWeights | None = None


def impute_att(counterfactuals: np.ndarray, panel: PanelData) -> float:
    """Mean treated-cell gap ``y - yhat(0)`` over the post-treatment block."""
    cf = np.asarray(counterfactuals, dtype=float)
    if cf.shape != (panel.n1, panel.t1):
        raise ValueError(
            f"counterfactuals shape {cf.shape}, expected {(panel.n1, panel.t1)}"
        )
    gaps = panel.outcomes[panel.treated_index][:, panel.t0:] - cf
    return float(gaps.mean())


def _pack_result(panel, cf_full, method, weights=None, extra=None):
    """Assemble an ImputationResult from full-horizon counterfactuals (N1 x T)."""
    tr = panel.treated_index
    y_tr = panel.outcomes[tr]
    gaps = y_tr - cf_full
    pre_mspe = float((gaps[:, : panel.t0] ** 2).mean())
    post_mspe = float((gaps[:, panel.t0:] ** 2).mean())
    per_period = gaps[:, panel.t0:].mean(axis=0)
    att = float(per_period.mean())
    diagnostics = {"pre_mspe": pre_mspe, "post_mspe": post_mspe}
    if extra:
        diagnostics.update(extra)
    return ImputationResult(
        att=att,
        per_period=per_period,
        counterfactuals=cf_full[:, panel.t0:],
        diagnostics=diagnostics,
        method=method,
        pre_mspe=pre_mspe,
        post_mspe=post_mspe,
        weights=weights,
    )


def fit_sc(panel: PanelData, mode: str = "per_unit", tol: float = 1e-10) -> ImputationResult:
    """Synthetic control: convex donor weights matched on pre-treatment outcomes.

    Per treated unit (default), weights minimize the pre-treatment squared
    prediction error over the simplex; ``mode="average"`` fits one shared
    weight vector to the average of the treated units instead.  Degenerate
    fits surface through ``pre_mspe``; nothing raises short of an invalid
    panel.
    """
    _require(panel.n0 >= 2, "SC needs at least 2 control units")
    _require(panel.t0 >= 2, "SC needs at least 2 pre-treatment periods")
    if mode not in ("per_unit", "average"):
        raise ValueError(f"unknown SC mode {mode!r}")
    y = panel.outcomes
    co, tr = panel.control_index, panel.treated_index
    donors_pre = y[co][:, : panel.t0].T  # (T0, N0)
    if mode == "per_unit":
        targets = y[tr][:, : panel.t0].T
    else:
        targets = y[tr][:, : panel.t0].mean(axis=0)[:, None]
    sol = solve_simplex_lsq(donors_pre, targets, tol=tol)
    w = sol.weights if sol.weights.ndim == 2 else sol.weights[:, None]
    cf_full = (y[co].T @ w).T  # (m, T)
    if mode == "average":
        cf_full = np.broadcast_to(cf_full, (panel.n1, panel.t)).copy()
    weights = ScWeights(w, donor_index=co)
    extra = {"solver_gap": float(sol.gap.max()), "solver_iterations": float(sol.iterations)}
    return _pack_result(panel, cf_full, "SC", weights, extra)


def fit_dsc(panel: PanelData, mode: str = "per_unit", tol: float = 1e-10) -> ImputationResult:
    """Demeaned synthetic control: SC on deviations from own pre-treatment means.

    Removing each unit's pre-treatment mean before weighting frees the fit
    from level differences, so only co-movement has to lie in the donors'
    convex hull; the treated unit's own level is added back to the
    counterfactual.
    """
    _require(panel.n0 >= 2, "DSC needs at least 2 control units")
    _require(panel.t0 >= 2, "DSC needs at least 2 pre-treatment periods")
    if mode not in ("per_unit", "average"):
        raise ValueError(f"unknown DSC mode {mode!r}")
    y = panel.outcomes
    co, tr = panel.control_index, panel.treated_index
    pre_means = y[:, : panel.t0].mean(axis=1)
    y_dev = y - pre_means[:, None]
    donors_pre = y_dev[co][:, : panel.t0].T
    if mode == "per_unit":
        targets = y_dev[tr][:, : panel.t0].T
        levels = pre_means[tr]
    else:
        targets = y_dev[tr][:, : panel.t0].mean(axis=0)[:, None]
        levels = pre_means[tr]
    sol = solve_simplex_lsq(donors_pre, targets, tol=tol)
    w = sol.weights if sol.weights.ndim == 2 else sol.weights[:, None]
    cf_dev = (y_dev[co].T @ w).T
    if mode == "average":
        cf_dev = np.broadcast_to(cf_dev, (panel.n1, panel.t)).copy()
    cf_full = cf_dev + levels[:, None]
    intercepts = levels - (w.T @ pre_means[co] if mode == "per_unit"
                           else np.full(panel.n1, float(w[:, 0] @ pre_means[co])))
    weights = ScWeights(w, donor_index=co, intercept=np.asarray(intercepts))
    extra = {"solver_gap": float(sol.gap.max()), "solver_iterations": float(sol.iterations)}
    return _pack_result(panel, cf_full, "DSC", weights, extra)


def fit_gsc(panel: PanelData, k: int) -> ImputationResult:
    """Generalized synthetic control: factor imputation from the control block.

    Extracts a rank-k factor model from control units over all periods,
    projects each treated unit's pre-treatment outcomes on the pre-treatment
    factor rows to get its loadings, and imputes ``yhat(0) = loadings'F_t``
    for every period.
    """
    _require(k <= min(panel.n0, panel.t), "GSC needs k <= min(N0, T)")
    _require(panel.t0 > k, "GSC needs T0 > k to identify treated loadings")
    y = panel.outcomes
    co, tr = panel.control_index, panel.treated_index
    fm = principal_factors(y[co], k)
    f_pre = fm.factors[: panel.t0]
    lam_tr, *_ = np.linalg.lstsq(f_pre, y[tr][:, : panel.t0].T, rcond=None)
    cf_full = (fm.factors @ lam_tr).T
    return _pack_result(panel, cf_full, "GSC", extra={"k": float(k)})


def sdid_regularization(panel: PanelData) -> float:
    """Default SDiD ridge scale: SD of first-differenced control outcomes
    (pre-treatment) times ``(N1 * T1)**(1/4)``."""
    y_pre = panel.outcomes[panel.control_index][:, : panel.t0]
    diffs = np.diff(y_pre, axis=1)
    return float(diffs.std() * (panel.n1 * panel.t1) ** 0.25)


def fit_sdid(panel: PanelData, reg: float | None = None, tol: float = 1e-10) -> ImputationResult:
    """Synthetic difference-in-differences.

    Unit weights solve a ridge-penalized simplex regression (with intercept)
    of the treated units' average pre-treatment path on control paths; time
    weights solve the analogous problem matching each control unit's
    post-treatment average from its pre-treatment outcomes.  The ATT is the
    coefficient on the treatment dummy in the two-way fixed-effects
    regression weighted by the product of unit and time weights, computed
    exactly through weighted double demeaning.
    """
    _require(panel.n0 >= 2, "SDiD needs at least 2 control units")
    _require(panel.t0 >= 2, "SDiD needs at least 2 pre-treatment periods")
    if reg is None:
        reg = sdid_regularization(panel)
    _require(reg >= 0, "reg must be >= 0")
    y = panel.outcomes
    co, tr = panel.control_index, panel.treated_index
    t0, t1, n0, n1 = panel.t0, panel.t1, panel.n0, panel.n1

    # unit weights: intercept absorbed by centering over pre periods
    donors_pre = y[co][:, :t0].T  # (T0, N0)
    target_u = y[tr][:, :t0].mean(axis=0)
    bu = donors_pre - donors_pre.mean(axis=0)
    cu = target_u - target_u.mean()
    sol_u = solve_simplex_lsq(bu, cu, ridge=reg**2 * t0, tol=tol)
    omega = np.asarray(sol_u.weights, dtype=float).ravel()

    # time weights: intercept absorbed by centering over control units
    periods_pre = y[co][:, :t0]  # (N0, T0)
    target_t = y[co][:, t0:].mean(axis=1)
    bt = periods_pre - periods_pre.mean(axis=0)
    ct = target_t - target_t.mean()
    sol_t = solve_simplex_lsq(bt, ct, tol=tol)
    lam = np.asarray(sol_t.weights, dtype=float).ravel()

    r = np.zeros(panel.n)
    r[co] = omega
    r[tr] = 1.0 / n1
    c = np.zeros(panel.t)
    c[:t0] = lam
    c[t0:] = 1.0 / t1

    def wdemean(x):
        row = (x @ c) / c.sum()
        col = (r @ x) / r.sum()
        grand = float(r @ x @ c) / (r.sum() * c.sum())
        return x - row[:, None] - col[None, :] + grand

    d = np.zeros((panel.n, panel.t))
    d[np.ix_(tr, np.arange(t0, panel.t))] = 1.0
    yd = wdemean(y)
    dd = wdemean(d)
    v = np.outer(r, c)
    att = float((v * yd * dd).sum() / (v * dd * dd).sum())

    # per-cell counterfactual consistent with the regression coefficient:
    # weighted controls at t, plus the unit's own weighted pre level,
    # minus the weighted controls' weighted pre level
    ctrl_path = omega @ y[co]  # (T,)
    own_pre = y[tr][:, :t0] @ lam
    ctrl_pre = float(ctrl_path[:t0] @ lam)
    cf_full = ctrl_path[None, :] + own_pre[:, None] - ctrl_pre

    weights = ScWeights(
        omega[:, None], donor_index=co, intercept=own_pre - ctrl_pre
    )
    extra = {
        "reg": float(reg),
        "time_weight_gap": float(sol_t.gap.max()),
        "unit_weight_gap": float(sol_u.gap.max()),
    }
    result = _pack_result(panel, cf_full, "SDiD", weights, extra)
    # the regression coefficient and the mean counterfactual gap coincide
    # algebraically for product weights; keep the regression value as att
    result.diagnostics["att_regression"] = att
    result.att = att
    return result


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)
