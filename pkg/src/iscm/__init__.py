"""Synthetic control estimation with spillover-aware effect correction.

The package fits synthetic-control donor weights with treatment-affected
units kept in the donor pool, then removes the resulting contamination by
solving the linear system linking every naive gap estimate to the true
effects through the fitted cross weights. Diagnostics compare the inclusive
approach against donor-pool restriction, placebo machinery provides
permutation-style inference with effect-adjusted outcomes, and a factor-model
simulator supplies ground truth for validation.
"""

from .diagnostics import (
    BalanceTable,
    BiasLedger,
    CompareConfig,
    SpecComparison,
    balance_table,
    bias_ledger_single_affected,
    compare_specs,
)
from .exceptions import IscmError
from .inference import (
    PlaceboConfig,
    PlaceboResult,
    placebo_in_space,
    placebo_in_time,
    placebo_ratio_affected,
    placebo_ratio_main,
)
from .panel import (
    PanelDataset,
    PanelSchema,
    PredictorSpec,
    RoleAssignment,
    assign_roles,
    canonical_schema,
    donor_pool,
    load_panel,
    predictor_matrices,
    save_panel,
    split_periods,
)
from .pipeline import PipelineResult, run_pipeline
from .scm import (
    FitConfig,
    ScmFit,
    VWeights,
    WeightVector,
    cross_validate_lambda,
    fit_penalized,
    fit_scm,
    fit_weights,
    optimize_v,
    rmspe,
    synthetic_path,
)
from .simulation import (
    RecoverySummary,
    SimulatedPanel,
    SimulationConfig,
    generate,
    recovery_experiment,
)
from .solver import (
    EffectSeries,
    InvertibilityReport,
    OmegaSystem,
    build_system,
    check_invertibility,
    solve_effects,
    solve_single_affected,
    solve_single_affected_simplified,
)

__version__ = "0.1.0"

__all__ = [
    "BalanceTable",
    "BiasLedger",
    "CompareConfig",
    "EffectSeries",
    "FitConfig",
    "InvertibilityReport",
    "IscmError",
    "OmegaSystem",
    "PanelDataset",
    "PanelSchema",
    "PipelineResult",
    "PlaceboConfig",
    "PlaceboResult",
    "PredictorSpec",
    "RecoverySummary",
    "RoleAssignment",
    "ScmFit",
    "SimulatedPanel",
    "SimulationConfig",
    "SpecComparison",
    "VWeights",
    "WeightVector",
    "assign_roles",
    "balance_table",
    "bias_ledger_single_affected",
    "build_system",
    "canonical_schema",
    "check_invertibility",
    "compare_specs",
    "cross_validate_lambda",
    "donor_pool",
    "fit_penalized",
    "fit_scm",
    "fit_weights",
    "generate",
    "load_panel",
    "optimize_v",
    "placebo_in_space",
    "placebo_in_time",
    "placebo_ratio_affected",
    "placebo_ratio_main",
    "predictor_matrices",
    "recovery_experiment",
    "rmspe",
    "run_pipeline",
    "save_panel",
    "solve_effects",
    "solve_single_affected",
    "solve_single_affected_simplified",
    "split_periods",
    "synthetic_path",
]
