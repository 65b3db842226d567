"""panellab: panel-data causal inference with latent factor structures.

Estimators: interactive fixed effects (static and dynamic), synthetic
control, demeaned SC, generalized SC, and synthetic difference-in-
differences.  Plus seeded Monte Carlo designs, permutation placebo
inference, and a reproducible experiment harness.
"""

from .dgp import DgpSpec, GeneratedPanel, generate, gen_dyn, gen_het, gen_hom, gen_inv
from .factors import FactorModel, Projection, annihilator, d_functional, principal_factors
from .harness import (
    ExperimentConfig,
    SweepReport,
    analyze_csv,
    run_appendix_c,
    run_appendix_d,
    run_sweep,
    run_table1,
)
from .ife import IfeConfig, IfeResult, fit_dynamic, fit_ife, fit_static, sse
from .panel import (
    AttEstimate,
    PanelData,
    PanelFormatError,
    load_panel,
    load_result,
    save_panel,
    save_result,
    treatment_mask,
)
from .placebo import (
    PlaceboDistribution,
    abs_att_statistic,
    mspe_ratio_statistic,
    placebo_test,
)
from .scfamily import (
    ImputationResult,
    ScWeights,
    fit_dsc,
    fit_gsc,
    fit_sc,
    fit_sdid,
    impute_att,
)

__version__ = "0.1.0"

__all__ = [
    "AttEstimate",
    "DgpSpec",
    "ExperimentConfig",
    "FactorModel",
    "GeneratedPanel",
    "IfeConfig",
    "IfeResult",
    "ImputationResult",
    "PanelData",
    "PanelFormatError",
    "PlaceboDistribution",
    "Projection",
    "ScWeights",
    "SweepReport",
    "abs_att_statistic",
    "analyze_csv",
    "annihilator",
    "d_functional",
    "fit_dsc",
    "fit_dynamic",
    "fit_gsc",
    "fit_ife",
    "fit_sc",
    "fit_sdid",
    "fit_static",
    "gen_dyn",
    "gen_het",
    "gen_hom",
    "gen_inv",
    "generate",
    "impute_att",
    "load_panel",
    "load_result",
    "mspe_ratio_statistic",
    "placebo_test",
    "principal_factors",
    "run_appendix_c",
    "run_appendix_d",
    "run_sweep",
    "run_table1",
    "save_panel",
    "save_result",
    "sse",
    "treatment_mask",
]
