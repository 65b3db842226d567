"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line.  Criteria 1-5 are distributional
benchmarks at desk scale (R = 1000 unless stated); 6-7 are exact oracle and
invariant suites; 8 is the inference level check.  Heavy sweeps run with two
workers; results are worker-count invariant by construction.
"""

import time

import numpy as np
import pytest

import panellab as pl
from panellab.factors import annihilator, principal_factors
from panellab.harness import ExperimentConfig, run_appendix_c, run_sweep
from panellab.ife import IfeConfig, fit_ife, fit_static, sse
from panellab.panel import PanelData, treatment_mask
from panellab.placebo import mspe_ratio_statistic, placebo_test
from panellab.scfamily import fit_dsc, fit_gsc, fit_sc, fit_sdid
from panellab.simplex import solve_simplex_lsq

WORKERS = 2
STRUCTURAL_SEED = 7
NOISE_SEED = 1


def report(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line, flush=True)
    assert passed, line


# --------------------------------------------------------------------- #
# 1. bad control: heterogeneous effects drive the estimator to the
#    common component, far from the ATT
# --------------------------------------------------------------------- #


def test_criterion_1_bad_control():
    start = time.time()
    spec = pl.DgpSpec(design="HET", n=50, t=50,
                      structural_seed=STRUCTURAL_SEED, noise_seed=NOISE_SEED)
    config = ExperimentConfig(
        dgp=spec, estimators=[("ife", {"k": 3})],
        replications=1000, workers=WORKERS,
    )
    row = run_sweep(config).cell("ife")
    elapsed = time.time() - start
    band = 3 * 0.264 / np.sqrt(1000)
    ok_gamma = abs(row["mean"] - 1.0) <= band
    ok_att = abs(row["mean"] - 2.0) > 0.9
    ok_time = elapsed < 600
    report(
        1, ok_gamma and ok_att and ok_time,
        f"mean={row['mean']:.4f} (band 1±{band:.4f}), |mean-2|={abs(row['mean']-2):.3f}>0.9, "
        f"runtime={elapsed:.0f}s<600s",
    )


# --------------------------------------------------------------------- #
# 2. homogeneous benchmark: all five estimators centered, smallest
#    variance for the interactive fit
# --------------------------------------------------------------------- #


def test_criterion_2_homogeneous_benchmark():
    spec = pl.DgpSpec(design="HOM", n=50, t=50,
                      structural_seed=STRUCTURAL_SEED, noise_seed=NOISE_SEED)
    config = ExperimentConfig(
        dgp=spec,
        estimators=[
            ("ife", {"k": 1}), ("gsc", {"k": 1}),
            ("sc", {}), ("dsc", {}), ("sdid", {}),
        ],
        replications=1000, workers=WORKERS,
    )
    rows = run_sweep(config).rows
    max_bias = rows["bias"].abs().max()
    ok_means = max_bias <= 0.03
    sds = dict(zip(rows["estimator"], rows["sd"]))
    ok_sd = sds["ife"] == min(sds.values())
    report(
        2, ok_means and ok_sd,
        f"max |mean-2|={max_bias:.4f}<=0.03; "
        f"ife sd={sds['ife']:.4f} smallest of {[round(v, 4) for v in sds.values()]}",
    )


# --------------------------------------------------------------------- #
# 3. heterogeneity robustness of the imputation family
# --------------------------------------------------------------------- #


def test_criterion_3_imputation_robustness():
    spec = pl.DgpSpec(design="HET", n=100, t=100,
                      structural_seed=STRUCTURAL_SEED, noise_seed=NOISE_SEED)
    config = ExperimentConfig(
        dgp=spec,
        estimators=[("gsc", {"k": 1}), ("sc", {}), ("dsc", {}), ("sdid", {})],
        replications=1000, workers=WORKERS,
    )
    rows = run_sweep(config).rows
    max_bias = rows["bias"].abs().max()
    report(
        3, max_bias <= 0.12,
        f"max |mean-2|={max_bias:.4f}<=0.12 across "
        f"{dict(zip(rows['estimator'], rows['mean'].round(4)))}",
    )


# --------------------------------------------------------------------- #
# 4. dynamic specification rescue and asymptotically negligible shares
# --------------------------------------------------------------------- #


def test_criterion_4_dynamic_specification():
    spec = pl.DgpSpec(design="DYN", n=220, t=25, n1=20, t0=15,
                      structural_seed=STRUCTURAL_SEED, noise_seed=NOISE_SEED)
    config = ExperimentConfig(
        dgp=spec,
        estimators=[
            ("ife", {"k": 4, "spec": "dynamic", "restarts": 2, "tol": 1e-7,
                     "label": "dyn"}),
            ("ife", {"k": 4, "spec": "static", "restarts": 2, "tol": 1e-7,
                     "label": "stat"}),
        ],
        replications=1000, workers=WORKERS,
    )
    rep = run_sweep(config, keep_reps=True)
    dyn = rep.per_rep["dyn"]
    stat = rep.per_rep["stat"]
    use_d = dyn["converged"] & ~dyn["failed"]
    use_s = stat["converged"] & ~stat["failed"]
    dyn_bias = float((dyn["att"] - dyn["true_att"])[use_d].mean())
    stat_bias = float((stat["att"] - stat["true_att"])[use_s].mean())
    ok_dyn = abs(dyn_bias) < 0.15
    ok_stat = 0.95 <= stat_bias <= 1.15

    spec2 = pl.DgpSpec(design="DYN", n=520, t=510, n1=20, t0=500,
                       structural_seed=STRUCTURAL_SEED, noise_seed=NOISE_SEED)
    config2 = ExperimentConfig(
        dgp=spec2,
        estimators=[("ife", {"k": 4, "spec": "static", "restarts": 2,
                             "tol": 1e-7, "label": "stat"})],
        replications=200, workers=WORKERS,
    )
    row2 = run_sweep(config2).cell("stat")
    ok_negligible = abs(row2["bias"]) < 0.03
    report(
        4, ok_dyn and ok_stat and ok_negligible,
        f"dynamic bias={dyn_bias:+.4f} (|.|<0.15 {'ok' if ok_dyn else 'VIOLATED'}); "
        f"static bias={stat_bias:+.4f} (in [0.95,1.15] {'ok' if ok_stat else 'VIOLATED'}); "
        f"negligible-share static bias={row2['bias']:+.4f} (|.|<0.03 "
        f"{'ok' if ok_negligible else 'VIOLATED'})",
    )


# --------------------------------------------------------------------- #
# 5. invariant heterogeneity: dispersion concentrates where the fitted
#    factors absorb the treatment profile, and the estimator is biased
# --------------------------------------------------------------------- #


def test_criterion_5_invariant_multimodality():
    rep, art = run_appendix_c(
        k_alpha=2, reps=1000, size=(50, 50), workers=WORKERS,
        structural_seed=40, noise_seed=NOISE_SEED,
        ife_params={"max_iters": 150, "restarts": 5},
    )
    bottom, top = art["quartile_sd"][0], art["quartile_sd"][3]
    ratio = bottom / top
    sd = art["overall_sd"]
    gap = abs(art["overall_mean"] - 0.75)
    threshold = 3 * sd / np.sqrt(len(art["att"]))
    ok_ratio = ratio >= 2.0
    ok_bias = gap > threshold
    report(
        5, ok_ratio and ok_bias,
        f"quartile sd ratio={ratio:.1f}>=2; |mean-3/4|={gap:.3f}>{threshold:.3f} "
        f"(mean={art['overall_mean']:.3f}, sd={sd:.3f})",
    )


# --------------------------------------------------------------------- #
# 6. oracle suites
# --------------------------------------------------------------------- #


def grid_oracle_alpha(panel, k, lo, hi, step=1e-4):
    alphas = np.arange(lo, hi + step / 2, step)
    mask = treatment_mask(panel)
    y = panel.outcomes
    yty, dty, dtd = y.T @ y, mask.T @ y, mask.T @ mask
    grams = (
        yty[None] - alphas[:, None, None] * (dty + dty.T)[None]
        + (alphas**2)[:, None, None] * dtd[None]
    )
    vals = np.linalg.eigvalsh(grams)
    top = vals[:, -k:].sum(axis=1) if k else np.zeros(len(alphas))
    obj = np.trace(grams, axis1=1, axis2=2) - top
    return float(alphas[np.argmin(obj)])


def test_criterion_6_oracle_suites():
    rng = np.random.default_rng(60)

    # (a) concentrated-SSE grid oracle vs the alternating fit
    worst_alpha = 0.0
    for i in range(50):
        n = int(rng.integers(5, 9))
        t = int(rng.integers(5, 9))
        n1, t0 = max(1, n // 2), max(1, t // 2)
        f = rng.standard_normal((t, 1))
        lam = rng.standard_normal((n, 1))
        y = lam @ f.T + 0.5 * rng.standard_normal((n, t))
        alpha_true = float(rng.uniform(-1, 2))
        y[:n1, t0:] += alpha_true
        panel = PanelData(y, frozenset(range(n1)), t0=t0)
        res = fit_ife(panel, IfeConfig(k=1, restarts=8, tol=1e-12, seed=i))
        oracle = grid_oracle_alpha(panel, 1, alpha_true - 4.0, alpha_true + 4.0)
        worst_alpha = max(worst_alpha, abs(res.att - oracle))
    ok_a = worst_alpha < 2e-4

    # (b) fast vs naive collinearity functional
    from tests.test_factors import naive_d_functional, random_panel

    worst_d = 0.0
    for _ in range(100):
        panel = random_panel(rng, n=6, t=6)
        k = int(rng.integers(0, 3))
        f = rng.standard_normal((panel.t, k))
        lam = rng.standard_normal((panel.n, k))
        worst_d = max(worst_d, abs(
            pl.d_functional(f, panel, lam) - naive_d_functional(f, panel, lam)
        ))
    ok_b = worst_d < 1e-10

    # (c) simplex solver never worse than the exhaustive grid
    from tests.test_scfamily import simplex_grid_best

    worst_gap = -np.inf
    for _ in range(50):
        design = rng.standard_normal((4, 3))
        target = rng.standard_normal(4)
        sol = solve_simplex_lsq(design, target)
        worst_gap = max(worst_gap, float(sol.objective[0]) - simplex_grid_best(design, target))
    ok_c = worst_gap < 1e-6

    # (d) objective evaluation vs elementwise loop
    from tests.test_ife import sse_loop_oracle

    worst_sse = 0.0
    for _ in range(20):
        n, t = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        panel = PanelData(
            rng.standard_normal((n, t)), frozenset({0}), t0=max(1, t // 2)
        )
        f = rng.standard_normal((t, 1))
        a = float(rng.standard_normal())
        worst_sse = max(worst_sse, abs(sse(panel, a, f) - sse_loop_oracle(panel, a, f)))
    ok_d = worst_sse < 1e-10

    report(
        6, ok_a and ok_b and ok_c and ok_d,
        f"grid-oracle max|dalpha|={worst_alpha:.2e}<2e-4; naive-vs-fast D={worst_d:.2e}<1e-10; "
        f"simplex gap={worst_gap:.2e}<1e-6; sse loop={worst_sse:.2e}<1e-10",
    )


# --------------------------------------------------------------------- #
# 7. invariant suites over a randomized corpus (>= 1000 cases)
# --------------------------------------------------------------------- #


def test_criterion_7_invariant_suites():
    rng = np.random.default_rng(70)
    cases = 0
    violations = []

    # projection idempotence / symmetry / annihilation (330 cases)
    for _ in range(330):
        t = int(rng.integers(2, 14))
        k = int(rng.integers(0, t))
        f = rng.standard_normal((t, k))
        m = annihilator(f).annihilator
        if np.abs(m @ m - m).max() > 1e-8 or np.abs(m - m.T).max() > 1e-8:
            violations.append("projection")
        if k and np.abs(m @ f).max() > 1e-8:
            violations.append("annihilation")
        cases += 1

    # factor normalization (330 cases)
    for _ in range(330):
        n, t = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        k = int(rng.integers(1, min(n, t) + 1))
        fm = principal_factors(rng.standard_normal((n, t)), k)
        if np.abs(fm.factors.T @ fm.factors / t - np.eye(k)).max() > 1e-8:
            violations.append("normalization")
        cases += 1

    # SSE monotone descent (60 fits)
    for i in range(60):
        n, t = int(rng.integers(5, 10)), int(rng.integers(5, 10))
        y = rng.standard_normal((n, t))
        y[: n // 2, t // 2:] += rng.uniform(-1, 2)
        panel = PanelData(y, frozenset(range(max(1, n // 2))), t0=max(1, t // 2))
        res = fit_static(panel, IfeConfig(k=1, restarts=1, seed=i))
        path = np.array(res.sse_path)
        if not (np.diff(path) <= 1e-9 * np.maximum(path[:-1], 1.0)).all():
            violations.append("descent")
        cases += 1

    # simplex feasibility of every produced weight vector (>=200 vectors)
    vectors = 0
    while vectors < 200:
        n, t = int(rng.integers(6, 10)), int(rng.integers(6, 10))
        n1, t0 = int(rng.integers(1, 4)), max(2, t // 2)
        y = rng.standard_normal((n, t))
        panel = PanelData(y, frozenset(range(n1)), t0=t0)
        for res in (fit_sc(panel), fit_dsc(panel), fit_sdid(panel)):
            w = res.weights.weights
            if w.min() < -1e-8 or np.abs(w.sum(axis=0) - 1).max() > 1e-8:
                violations.append("simplex")
            vectors += w.shape[1]
            cases += w.shape[1]  # one case per produced weight vector

    # no-leakage under treated-post corruption (60 fit pairs)
    for _ in range(15):
        n, t = int(rng.integers(7, 11)), int(rng.integers(8, 12))
        n1, t0 = 2, t // 2
        y = rng.standard_normal((n, t))
        panel = PanelData(y, frozenset(range(n1)), t0=t0)
        bad = y.copy()
        bad[:n1, t0:] = 1e6
        other = panel.with_outcomes(bad)
        for fit in (fit_sc, fit_dsc, lambda p: fit_gsc(p, k=1), fit_sdid):
            if not np.array_equal(
                fit(panel).counterfactuals, fit(other).counterfactuals
            ):
                violations.append("leakage")
            cases += 1

    # permutation determinism and p-value bounds (40 runs)
    from tests.test_placebo import did_estimator

    for i in range(40):
        n, t = int(rng.integers(6, 10)), int(rng.integers(5, 9))
        panel = PanelData(
            rng.standard_normal((n, t)), frozenset(range(2)), t0=t // 2
        )
        a = placebo_test(panel, did_estimator, r=12, seed=i)
        b = placebo_test(panel, did_estimator, r=12, seed=i)
        if not np.array_equal(a.stats, b.stats) or not 0 <= a.p_value <= 1:
            violations.append("placebo")
        if a.p_value != float(np.mean(a.stats > a.observed)):
            violations.append("pvalue")
        cases += 1

    report(
        7, not violations and cases >= 1000,
        f"{cases} randomized cases, violations={violations[:5] or 'none'}",
    )


# --------------------------------------------------------------------- #
# 8. inference level under the sharp null
# --------------------------------------------------------------------- #


def make_null_panel(seed):
    """Unit-exchangeable panel with a factor structure and zero effects."""
    rng = np.random.default_rng(np.random.SeedSequence([81, seed]))
    n, t, n1, t0 = 16, 10, 3, 5
    f = rng.standard_normal(t)
    lam = rng.uniform(-np.sqrt(3), np.sqrt(3), n)
    y = np.outer(lam, f) + rng.standard_normal((n, t))
    return PanelData(y, frozenset(range(n1)), t0=t0)


def _gsc1(panel):
    return fit_gsc(panel, k=1)


def _null_rejections(i):
    """p <= 0.10 rejection indicators for one outer replication."""
    panel = make_null_panel(i)
    out = {}
    for name, fit, statistic in (
        ("sc", fit_sc, "mspe_ratio"),
        ("dsc", fit_dsc, "mspe_ratio"),
        ("gsc", _gsc1, "abs_att"),
        ("sdid", fit_sdid, "abs_att"),
    ):
        dist = placebo_test(panel, fit, statistic=statistic, r=99, seed=i)
        out[name] = dist.p_value <= 0.10
    return out


def test_criterion_8_inference_level():
    from concurrent.futures import ProcessPoolExecutor

    outer = 500
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        results = list(pool.map(_null_rejections, range(outer), chunksize=25))
    rates = {
        name: sum(res[name] for res in results) / outer
        for name in ("sc", "dsc", "gsc", "sdid")
    }
    ok = all(0.06 <= rate <= 0.14 for rate in rates.values())
    report(8, ok, f"rejection rates at nominal 10%: { {k: round(v, 3) for k, v in rates.items()} }")
