"""Experiment runner: seeded replication sweeps, canned study designs, and
single-dataset analysis.

Sweeps are deterministic given seeds and independent of the worker count:
every replication derives its random streams from ``(seeds, rep)`` alone, and
results are aggregated in replication order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dgp import DgpSpec, generate
from .ife import IfeConfig, fit_ife
from .panel import PanelData, load_panel
from .placebo import DESIGNATED_STATISTICS, placebo_test
from .scfamily import fit_dsc, fit_gsc, fit_sc, fit_sdid

__all__ = [
    "ExperimentConfig",
    "SweepReport",
    "run_sweep",
    "run_table1",
    "run_appendix_c",
    "run_appendix_d",
    "analyze_csv",
    "config_hash",
    "TABLE1_COLUMNS",
]

logger = logging.getLogger(__name__)

TABLE1_COLUMNS = ("ife", "gsc", "sc", "dsc", "sdid")

# extended factor count each design induces: untreated factors plus whatever
# additional structure (heterogeneity factors, additive effects) the fitted
# factor space must span
DESIGN_IFE_K = {"HOM": 1, "HET": 3, "INV": 2, "DYN": 4}


@dataclass
class ExperimentConfig:
    """One sweep: a DGP, a set of estimators, and replication controls."""

    dgp: DgpSpec
    estimators: list  # [(kind, params dict), ...]
    replications: int = 100
    workers: int = 1
    output_dir: str | None = None
    base_seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.estimators:
            raise ValueError("at least one estimator required")
        self.estimators = [(str(kind), dict(params)) for kind, params in self.estimators]

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "estimators": [[k, p] for k, p in self.estimators],
            "replications": self.replications,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "base_seed": self.base_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data["dgp"] = DgpSpec.from_dict(data["dgp"])
        data["estimators"] = [(k, dict(p)) for k, p in data["estimators"]]
        return cls(**data)


def config_hash(config) -> str:
    """Stable short hash of a config mapping (for output provenance)."""
    doc = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def fit_named(panel: PanelData, kind: str, params: dict, seed: int = 0):
    """Dispatch one estimator by registry name."""
    params = dict(params)
    if kind == "ife":
        cfg = IfeConfig(
            k=params.get("k", 1),
            spec=params.get("spec", "static"),
            max_iters=params.get("max_iters", 1000),
            tol=params.get("tol", 1e-9),
            restarts=params.get("restarts", 5),
            seed=params.get("seed", seed),
        )
        return fit_ife(panel, cfg)
    if kind == "gsc":
        return fit_gsc(panel, k=params.get("k", 1))
    if kind == "sc":
        return fit_sc(panel, mode=params.get("mode", "per_unit"))
    if kind == "dsc":
        return fit_dsc(panel, mode=params.get("mode", "per_unit"))
    if kind == "sdid":
        return fit_sdid(panel, reg=params.get("reg"))
    raise ValueError(f"unknown estimator kind {kind!r}")


def _estimator_seed(base_seed: int, rep: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, rep, index]).generate_state(1)[0])


def _run_rep(config: ExperimentConfig, rep: int) -> dict:
    gen = generate(config.dgp, rep)
    out = {"rep": rep, "true_att": gen.true_att, "estimates": []}
    if gen.true_per_period is not None:
        out["true_per_period"] = gen.true_per_period.tolist()
        # realized per-period treated-mean effects (incl. idiosyncratic part)
        block = gen.effects[gen.panel.treated_index][:, gen.panel.t0:]
        out["realized_per_period"] = block.mean(axis=0).tolist()
    for idx, (kind, params) in enumerate(config.estimators):
        seed = _estimator_seed(config.base_seed, rep, idx)
        try:
            result = fit_named(gen.panel, kind, params, seed=seed)
        except Exception as exc:  # noqa: BLE001 - excluded and counted
            logger.warning("rep %d estimator %s failed: %s", rep, kind, exc)
            out["estimates"].append(None)
            continue
        record = {
            "att": float(result.att),
            "converged": bool(result.diagnostics.get("converged", 1.0)),
            "d_of_F": float(result.diagnostics.get("d_of_F", np.nan)),
        }
        if result.per_period is not None:
            record["per_period"] = result.per_period.tolist()
        out["estimates"].append(record)
    return out


@dataclass
class SweepReport:
    """Aggregated sweep results: one row per (design cell, estimator)."""

    rows: pd.DataFrame
    meta: dict = field(default_factory=dict)
    per_rep: dict = field(default_factory=dict, repr=False)

    def cell(self, estimator: str, **criteria):
        """Return the single aggregate row matching the criteria."""
        frame = self.rows[self.rows["estimator"] == estimator]
        for key, value in criteria.items():
            frame = frame[frame[key] == value]
        if len(frame) != 1:
            raise KeyError(f"expected 1 row for {estimator}/{criteria}, found {len(frame)}")
        return frame.iloc[0]

    def text(self) -> str:
        show = self.rows.copy()
        for col in ("mean", "sd", "bias", "true_att"):
            show[col] = show[col].map(lambda v: f"{v:.4f}")
        return show.to_string(index=False)

    def save(self, output_dir) -> None:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "report.txt"), "w") as fh:
            fh.write(self.text() + "\n")
        self.rows.to_csv(os.path.join(output_dir, "report.csv"), index=False)
        if self.meta:
            with open(os.path.join(output_dir, "config.resolved"), "w") as fh:
                json.dump(self.meta, fh, indent=1, default=str)


def run_sweep(config: ExperimentConfig, keep_reps: bool = False) -> SweepReport:
    """Run all replications of one experiment and aggregate per estimator.

    Mean, SD, and bias are computed over replications where the estimator
    converged; failures and non-converged counts are reported per cell.
    Results are identical for any worker count.
    """
    reps = range(1, config.replications + 1)
    if config.workers > 1:
        chunk = max(1, config.replications // (config.workers * 8))
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_RepRunner(config), reps, chunksize=chunk))
    else:
        results = [_run_rep(config, rep) for rep in reps]

    rows = []
    per_rep = {}
    spec = config.dgp
    for idx, (kind, params) in enumerate(config.estimators):
        att = np.full(config.replications, np.nan)
        d_of_f = np.full(config.replications, np.nan)
        converged = np.zeros(config.replications, dtype=bool)
        failed = np.zeros(config.replications, dtype=bool)
        true_att = np.array([res["true_att"] for res in results])
        for j, res in enumerate(results):
            record = res["estimates"][idx]
            if record is None:
                failed[j] = True
                continue
            att[j] = record["att"]
            d_of_f[j] = record["d_of_F"]
            converged[j] = record["converged"]
        use = converged & ~failed
        label = params.get("label", kind)
        n_used = int(use.sum())
        mean = float(att[use].mean()) if n_used else np.nan
        sd = float(att[use].std(ddof=1)) if n_used > 1 else np.nan
        mean_true = float(true_att[use].mean()) if n_used else np.nan
        rows.append(
            {
                "design": spec.design,
                "t": spec.t,
                "n": spec.n,
                "n1": spec.n1,
                "t0": spec.t0,
                "estimator": label,
                "mean": mean,
                "sd": sd,
                "true_att": mean_true,
                "bias": mean - mean_true if n_used else np.nan,
                "reps_used": n_used,
                "n_failed": int(failed.sum()),
                "n_nonconverged": int((~converged & ~failed).sum()),
            }
        )
        if keep_reps:
            per_rep[label] = {
                "att": att,
                "d_of_F": d_of_f,
                "converged": converged,
                "failed": failed,
                "true_att": true_att,
                "per_period": [
                    None if res["estimates"][idx] is None
                    else res["estimates"][idx].get("per_period")
                    for res in results
                ],
                "realized_per_period": [
                    res.get("realized_per_period") for res in results
                ],
            }
    report = SweepReport(rows=pd.DataFrame(rows), meta=config.to_dict(), per_rep=per_rep)
    report.meta["config_hash"] = config_hash(config)
    if config.output_dir:
        report.save(config.output_dir)
    return report


class _RepRunner:
    """Picklable per-replication callable for process pools."""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    def __call__(self, rep: int) -> dict:
        return _run_rep(self.config, rep)


def _table1_estimators(design: str) -> list:
    return [
        ("ife", {"k": DESIGN_IFE_K[design], "label": "ife"}),
        ("gsc", {"k": 1, "label": "gsc"}),
        ("sc", {"label": "sc"}),
        ("dsc", {"label": "dsc"}),
        ("sdid", {"label": "sdid"}),
    ]


def run_table1(
    scale: str = "desk",
    reps: int | None = None,
    workers: int = 1,
    output_dir: str | None = None,
    structural_seed: int = 7,
    noise_seed: int = 1,
) -> SweepReport:
    """Canned benchmark sweep over homogeneous and heterogeneous designs.

    ``desk`` scale covers T, N in {50, 100} at 1000 replications;
    ``full`` covers the complete size grid at 10000 replications.
    """
    if scale == "desk":
        sizes = [(t, n) for t in (50, 100) for n in (50, 100)]
        reps = 1000 if reps is None else reps
    elif scale == "full":
        sizes = [(t, n) for t in (50, 100, 200, 1000) for n in (50, 100, 200, 1000)]
        reps = 10_000 if reps is None else reps
    else:
        raise ValueError("scale must be 'desk' or 'full'")

    frames = []
    for design in ("HOM", "HET"):
        for t, n in sizes:
            spec = DgpSpec(
                design=design, n=n, t=t,
                structural_seed=structural_seed, noise_seed=noise_seed,
            )
            config = ExperimentConfig(
                dgp=spec,
                estimators=_table1_estimators(design),
                replications=reps,
                workers=workers,
            )
            frames.append(run_sweep(config).rows)
    rows = pd.concat(frames, ignore_index=True)
    report = SweepReport(rows=rows, meta={"scale": scale, "replications": reps})
    if output_dir:
        report.save(output_dir)
    return report


def run_appendix_c(
    k_alpha: int = 2,
    reps: int = 1000,
    size: tuple = (50, 50),
    workers: int = 1,
    output_dir: str | None = None,
    structural_seed: int = 7,
    noise_seed: int = 1,
    bins: int = 40,
    ife_params: dict | None = None,
) -> tuple:
    """Time-invariant heterogeneity study: estimate distribution vs d_of_F.

    Runs the static estimator on the invariant-effect design, collects every
    replication's estimate and non-collinearity diagnostic (non-converged
    runs included, so pathologies stay visible), and emits the estimate
    histogram plus the estimate dispersion within d_of_F quartiles.
    ``k_alpha=0`` degenerates to the homogeneous design as a control
    condition.  Returns ``(SweepReport, artifact dict)``.
    """
    t, n = size
    if k_alpha == 0:
        spec = DgpSpec(design="HOM", n=n, t=t,
                       structural_seed=structural_seed, noise_seed=noise_seed)
        k_fit, reference = DESIGN_IFE_K["HOM"], 2.0
    else:
        spec = DgpSpec(design="INV", n=n, t=t, k_alpha=k_alpha,
                       structural_seed=structural_seed, noise_seed=noise_seed)
        k_fit = DESIGN_IFE_K["INV"]
        reference = {1: 0.25, 2: 0.75, 3: 0.5}[k_alpha]
    params = {"k": k_fit, "label": "ife"}
    if ife_params:
        params.update(ife_params)
    config = ExperimentConfig(
        dgp=spec,
        estimators=[("ife", params)],
        replications=reps,
        workers=workers,
    )
    report = run_sweep(config, keep_reps=True)
    data = report.per_rep["ife"]
    ok = ~data["failed"]
    att = data["att"][ok]
    d_vals = data["d_of_F"][ok]

    counts, edges = np.histogram(att, bins=bins)
    quartile_edges = np.quantile(d_vals, [0.25, 0.5, 0.75])
    quartile = np.digitize(d_vals, quartile_edges)
    quartile_sd = []
    for q in range(4):
        vals = att[quartile == q]
        quartile_sd.append(float(vals.std(ddof=1)) if len(vals) > 1 else np.nan)
    artifact = {
        "reference_att": reference,
        "histogram_counts": counts.tolist(),
        "histogram_edges": edges.tolist(),
        "att": att,
        "d_of_F": d_vals,
        "quartile_sd": quartile_sd,
        "overall_mean": float(att.mean()),
        "overall_sd": float(att.std(ddof=1)),
    }
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        report.save(output_dir)
        with open(os.path.join(output_dir, "histogram.bins"), "w") as fh:
            fh.write(f"# reference_att {reference}\n")
            for lo, hi, cnt in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo:.6f} {hi:.6f} {cnt}\n")
        with open(os.path.join(output_dir, "dispersion_by_quartile.txt"), "w") as fh:
            fh.write("d_of_F_quartile sd_of_estimate\n")
            for q, sd_val in enumerate(quartile_sd, start=1):
                fh.write(f"{q} {sd_val:.6f}\n")
        _maybe_plot_histogram(att, reference, os.path.join(output_dir, "histogram.png"))
    return report, artifact


def _maybe_plot_histogram(values, reference, path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(values, bins=40)
    ax.axvline(reference, linestyle="--")
    ax.set_xlabel("estimate")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


APPENDIX_D_ROWS = ((40, 20, 15, 10), (200, 20, 15, 10), (500, 20, 500, 10), (500, 500, 500, 100))


def run_appendix_d(
    reps: int = 200,
    rows: tuple = APPENDIX_D_ROWS,
    workers: int = 1,
    output_dir: str | None = None,
    structural_seed: int = 7,
    noise_seed: int = 1,
    restarts: int = 2,
    tol: float = 1e-7,
) -> SweepReport:
    """Event-time design grid: dynamic vs static specification.

    For each (N0, N1, T0, T1) row, reports the bias and SE of the dynamic
    average effect, the dynamic effect at horizon 10, and the static average
    effect.  The largest rows are expensive; trim ``rows`` or ``reps`` for
    smoke runs.
    """
    records = []
    per_rep = {}
    for n0, n1, t0, t1 in rows:
        spec = DgpSpec(
            design="DYN", n=n0 + n1, t=t0 + t1, n1=n1, t0=t0,
            structural_seed=structural_seed, noise_seed=noise_seed,
        )
        k = DESIGN_IFE_K["DYN"]
        config = ExperimentConfig(
            dgp=spec,
            estimators=[
                ("ife", {"k": k, "spec": "dynamic", "restarts": restarts, "tol": tol, "label": "ife_dynamic"}),
                ("ife", {"k": k, "spec": "static", "restarts": restarts, "tol": tol, "label": "ife_static"}),
            ],
            replications=reps,
            workers=workers,
        )
        report = run_sweep(config, keep_reps=True)
        row_key = (n0, n1, t0, t1)
        per_rep[row_key] = report.per_rep
        dyn = report.per_rep["ife_dynamic"]
        stat = report.per_rep["ife_static"]
        use_d = dyn["converged"] & ~dyn["failed"]
        use_s = stat["converged"] & ~stat["failed"]
        horizon = 10
        psi10 = np.array(
            [pp[horizon - 1] if pp is not None and len(pp) >= horizon else np.nan
             for pp in dyn["per_period"]]
        )
        # measured against the realized per-period effect, noise included
        realized10 = np.array(
            [rp[horizon - 1] if rp is not None and len(rp) >= horizon else np.nan
             for rp in dyn["realized_per_period"]]
        )
        psi10_bias = (psi10 - realized10)[use_d]
        record = {
            "n0": n0, "n1": n1, "t0": t0, "t1": t1,
            "dyn_att_bias": float((dyn["att"] - dyn["true_att"])[use_d].mean()),
            "dyn_att_se": float((dyn["att"] - dyn["true_att"])[use_d].std(ddof=1)),
            "dyn_psi10_bias": float(np.nanmean(psi10_bias)),
            "dyn_psi10_se": float(np.nanstd(psi10_bias, ddof=1)),
            "static_att_bias": float((stat["att"] - stat["true_att"])[use_s].mean()),
            "static_att_se": float((stat["att"] - stat["true_att"])[use_s].std(ddof=1)),
            "reps_used_dynamic": int(use_d.sum()),
            "reps_used_static": int(use_s.sum()),
        }
        records.append(record)
    frame = pd.DataFrame(records)
    report = SweepReport(rows=frame, meta={"replications": reps, "rows": list(rows)})
    report.per_rep = per_rep
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "report.txt"), "w") as fh:
            fh.write(frame.to_string(index=False) + "\n")
        frame.to_csv(os.path.join(output_dir, "report.csv"), index=False)
    return report


def analyze_csv(
    path,
    estimators: list | None = None,
    inference: bool = False,
    reps: int = 500,
    seed: int = 0,
    k: int = 2,
    schema: dict | None = None,
    output_dir: str | None = None,
) -> pd.DataFrame:
    """Estimate the ATT of a user dataset with each requested estimator.

    Produces one row per estimator with the ATT and, when ``inference`` is
    on, the permutation placebo p-value under each estimator's designated
    statistic.
    """
    panel = load_panel(path, schema=schema)
    if estimators is None:
        estimators = [(kind, {}) for kind in TABLE1_COLUMNS]
    rows = []
    for idx, (kind, params) in enumerate(estimators):
        params = dict(params)
        if kind in ("ife", "gsc"):
            params.setdefault("k", k)
        fit = lambda p, _kind=kind, _params=params: fit_named(p, _kind, _params, seed=seed)
        estimate = fit(panel)
        row = {"estimator": params.get("label", kind), "att": float(estimate.att)}
        if inference:
            statistic = DESIGNATED_STATISTICS.get(kind, "abs_att")
            dist = placebo_test(
                panel, fit, statistic=statistic, r=reps,
                seed=_estimator_seed(seed, 0, idx),
            )
            row["p_value"] = dist.p_value
            row["statistic"] = statistic
        else:
            row["p_value"] = np.nan
            row["statistic"] = ""
        rows.append(row)
    frame = pd.DataFrame(rows)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "report.txt"), "w") as fh:
            fh.write(frame.to_string(index=False) + "\n")
        frame.to_csv(os.path.join(output_dir, "report.csv"), index=False)
    return frame
