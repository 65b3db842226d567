"""Balanced-panel data model with block treatment, plus CSV ingestion and result I/O.

The canonical object is :class:`PanelData`: an N x T outcome matrix, a set of
treated units, and a cutoff ``t0`` such that treatment is active exactly for
``i`` treated and period index ``>= t0`` (0-based; the first ``t0`` columns are
pre-treatment).  Treatment is restricted to a single block: every treated unit
adopts at the same period and never reverts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "PanelData",
    "AttEstimate",
    "PanelFormatError",
    "load_panel",
    "save_panel",
    "treatment_mask",
    "save_result",
    "load_result",
]

DEFAULT_SCHEMA = {"unit": "unit", "period": "period", "y": "y", "d": "d"}


class PanelFormatError(ValueError):
    """Raised when an input file or matrix violates the balanced block-panel contract."""


@dataclass(frozen=True)
class PanelData:
    """Balanced N x T panel with block (non-staggered) treatment.

    Parameters
    ----------
    outcomes : ndarray, shape (N, T)
        Realized outcome ``y[i, t]`` for unit ``i`` in period ``t``.
    treated_units : frozenset of int
        0-based row indices of treated units; nonempty and a strict subset.
    t0 : int
        Number of pre-treatment periods.  Treatment is active for column
        indices ``t >= t0``; requires ``1 <= t0 < T``.
    covariates : tuple of ndarray, optional
        Each entry an N x T matrix of one time-varying covariate.
    unit_labels, period_labels : tuple, optional
        Original labels in panel order (kept for reporting only).
    """

    outcomes: np.ndarray
    treated_units: frozenset
    t0: int
    covariates: tuple = ()
    unit_labels: tuple = ()
    period_labels: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        if y.ndim != 2:
            raise PanelFormatError(f"outcomes must be 2-D, got shape {y.shape}")
        if not np.isfinite(y).all():
            raise PanelFormatError("outcomes contain non-finite values")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treated_units", frozenset(int(i) for i in self.treated_units))
        n, t = y.shape
        if not self.treated_units:
            raise PanelFormatError("at least one treated unit required")
        if not all(0 <= i < n for i in self.treated_units):
            raise PanelFormatError("treated unit index out of range")
        if len(self.treated_units) >= n:
            raise PanelFormatError("at least one control unit required")
        if not 1 <= self.t0 < t:
            raise PanelFormatError(f"t0={self.t0} must satisfy 1 <= t0 < T={t}")
        covs = tuple(np.asarray(z, dtype=float) for z in self.covariates)
        for j, z in enumerate(covs):
            if z.shape != y.shape:
                raise PanelFormatError(f"covariate {j} has shape {z.shape}, expected {y.shape}")
            if not np.isfinite(z).all():
                raise PanelFormatError(f"covariate {j} contains non-finite values")
        object.__setattr__(self, "covariates", covs)
        y.setflags(write=False)
        for z in covs:
            z.setflags(write=False)

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def t(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n1(self) -> int:
        return len(self.treated_units)

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def t1(self) -> int:
        return self.t - self.t0

    @property
    def treated_index(self) -> np.ndarray:
        """Sorted array of treated row indices."""
        return np.array(sorted(self.treated_units), dtype=int)

    @property
    def control_index(self) -> np.ndarray:
        """Sorted array of control row indices."""
        return np.array(sorted(set(range(self.n)) - self.treated_units), dtype=int)

    def treated_flags(self) -> np.ndarray:
        """Boolean length-N vector marking treated units (d_i)."""
        flags = np.zeros(self.n, dtype=bool)
        flags[self.treated_index] = True
        return flags

    def post_flags(self) -> np.ndarray:
        """Boolean length-T vector marking post-treatment periods (d_t)."""
        flags = np.zeros(self.t, dtype=bool)
        flags[self.t0:] = True
        return flags

    def with_treated(self, treated_units) -> "PanelData":
        """Copy of this panel with a reassigned treated set (same cutoff)."""
        return PanelData(
            outcomes=self.outcomes,
            treated_units=frozenset(treated_units),
            t0=self.t0,
            covariates=self.covariates,
            unit_labels=self.unit_labels,
            period_labels=self.period_labels,
        )

    def with_outcomes(self, outcomes) -> "PanelData":
        """Copy of this panel with replaced outcome matrix."""
        return PanelData(
            outcomes=np.array(outcomes, dtype=float),
            treated_units=self.treated_units,
            t0=self.t0,
            covariates=self.covariates,
            unit_labels=self.unit_labels,
            period_labels=self.period_labels,
        )


def treatment_mask(panel: PanelData) -> np.ndarray:
    """N x T {0,1} matrix with entry 1 exactly on treated cells.

    The mask is the outer product of the treated-unit indicator and the
    post-period indicator, hence rank one by construction.
    """
    return np.outer(
        panel.treated_flags().astype(float), panel.post_flags().astype(float)
    )


@dataclass
class AttEstimate:
    """Output of an ATT estimator.

    ``att`` is the scalar average effect on treated cells.  ``per_period``,
    when present, holds one estimate per post-treatment period and must
    average to ``att``.  ``counterfactuals`` is the N1 x T1 matrix of imputed
    untreated outcomes for treated cells (row order = sorted treated index).
    """

    att: float
    per_period: np.ndarray | None = None
    counterfactuals: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.att = float(self.att)
        if self.per_period is not None:
            self.per_period = np.asarray(self.per_period, dtype=float)
            mean = float(self.per_period.mean())
            scale = max(abs(self.att), abs(mean), 1.0)
            if abs(self.att - mean) > 1e-10 * scale:
                raise ValueError(
                    f"att={self.att} does not match mean(per_period)={mean}"
                )
        if self.counterfactuals is not None:
            self.counterfactuals = np.asarray(self.counterfactuals, dtype=float)


def load_panel(path, schema: dict | None = None) -> PanelData:
    """Read a long-format CSV into a validated :class:`PanelData`.

    Expected columns (names overridable through ``schema``): ``unit``,
    ``period``, ``y``, ``d``, plus optional covariates.  Covariate columns
    default to any named ``z1..zp``; pass ``schema={"covariates": [...]}``
    to select explicitly.  Units and periods are indexed in first-appearance
    order; original labels are preserved on the panel.

    Raises
    ------
    PanelFormatError
        On unbalanced panels, missing cells, non-numeric outcomes, or a
        treatment pattern that is not a single unit-by-period block.
    """
    cols = dict(DEFAULT_SCHEMA)
    explicit_covs = None
    if schema:
        explicit_covs = schema.get("covariates")
        cols.update({k: v for k, v in schema.items() if k in DEFAULT_SCHEMA})

    df = pd.read_csv(path, float_precision="round_trip")
    for key in ("unit", "period", "y", "d"):
        if cols[key] not in df.columns:
            raise PanelFormatError(f"missing column {cols[key]!r} in {path}")

    units = pd.unique(df[cols["unit"]])
    periods = pd.unique(df[cols["period"]])
    n, t = len(units), len(periods)
    if len(df) != n * t:
        raise PanelFormatError(
            f"unbalanced panel: {len(df)} rows for {n} units x {t} periods"
        )
    urow = {u: i for i, u in enumerate(units)}
    pcol = {p: j for j, p in enumerate(periods)}

    y = np.asarray(df[cols["y"]])
    if not np.issubdtype(y.dtype, np.number):
        raise PanelFormatError("non-numeric outcome column")
    rows = df[cols["unit"]].map(urow).to_numpy()
    colix = df[cols["period"]].map(pcol).to_numpy()

    seen = np.zeros((n, t), dtype=bool)
    seen[rows, colix] = True
    if not seen.all():
        raise PanelFormatError("missing cells: panel must be balanced")

    outcomes = np.full((n, t), np.nan)
    outcomes[rows, colix] = y.astype(float)
    if not np.isfinite(outcomes).all():
        raise PanelFormatError("non-numeric or missing outcome values")

    d = np.zeros((n, t))
    d[rows, colix] = np.asarray(df[cols["d"]], dtype=float)
    if not np.isin(d, (0.0, 1.0)).all():
        raise PanelFormatError("treatment flag must be 0/1")

    d_i = d.max(axis=1)
    d_t = d.max(axis=0)
    if not np.array_equal(d, np.outer(d_i, d_t)):
        raise PanelFormatError("non-block treatment: flag is not a unit x period block")
    # post periods must be a contiguous suffix in panel period order
    step = np.flatnonzero(d_t)
    if step.size == 0 or step.size == t:
        raise PanelFormatError("non-block treatment: need both pre and post periods")
    t0 = int(step[0])
    if not np.array_equal(step, np.arange(t0, t)):
        raise PanelFormatError("non-block treatment: treated periods are not a suffix")

    cov_names = explicit_covs
    if cov_names is None:
        cov_names = []
        j = 1
        while f"z{j}" in df.columns:
            cov_names.append(f"z{j}")
            j += 1
    covariates = []
    for name in cov_names:
        if name not in df.columns:
            raise PanelFormatError(f"missing covariate column {name!r}")
        z = np.full((n, t), np.nan)
        z[rows, colix] = np.asarray(df[name], dtype=float)
        covariates.append(z)

    return PanelData(
        outcomes=outcomes,
        treated_units=frozenset(np.flatnonzero(d_i > 0).tolist()),
        t0=t0,
        covariates=tuple(covariates),
        unit_labels=tuple(units.tolist()),
        period_labels=tuple(periods.tolist()),
    )


def save_panel(panel: PanelData, path, schema: dict | None = None) -> None:
    """Write a panel back to long-format CSV (inverse of :func:`load_panel`)."""
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if k in DEFAULT_SCHEMA})
    units = list(panel.unit_labels) or list(range(1, panel.n + 1))
    periods = list(panel.period_labels) or list(range(1, panel.t + 1))
    mask = treatment_mask(panel)
    records = {
        cols["unit"]: np.repeat(units, panel.t),
        cols["period"]: np.tile(periods, panel.n),
        cols["y"]: panel.outcomes.ravel(),
        cols["d"]: mask.ravel().astype(int),
    }
    for j, z in enumerate(panel.covariates, start=1):
        records[f"z{j}"] = z.ravel()
    # %.17g keeps the save/load round trip exact to the last bit
    pd.DataFrame(records).to_csv(path, index=False, float_format="%.17g")


def save_result(estimate: AttEstimate, path, meta: dict | None = None) -> None:
    """Serialize an estimate (plus optional run metadata) to a JSON document.

    The document carries ``att``, ``per_period``, ``counterfactuals`` and
    ``diagnostics`` losslessly; ``meta`` may add estimator name, config hash,
    seed, and similar provenance fields.
    """
    doc = {
        "att": estimate.att,
        "per_period": None
        if estimate.per_period is None
        else estimate.per_period.tolist(),
        "counterfactuals": None
        if estimate.counterfactuals is None
        else estimate.counterfactuals.tolist(),
        "diagnostics": {k: float(v) for k, v in estimate.diagnostics.items()},
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_result(path) -> AttEstimate:
    """Read an estimate written by :func:`save_result`."""
    with open(path) as fh:
        doc = json.load(fh)
    return AttEstimate(
        att=doc["att"],
        per_period=None if doc["per_period"] is None else np.array(doc["per_period"]),
        counterfactuals=None
        if doc["counterfactuals"] is None
        else np.array(doc["counterfactuals"]),
        diagnostics=dict(doc.get("diagnostics", {})),
    )
