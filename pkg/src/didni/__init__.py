"""didni: non-inferiority testing for difference-in-differences assumptions.

A library and CLI for fitting DID models with flexible treated-group trend
differences, statistically comparing treatment effects across nested
specifications, computing non-inferiority power, and running the Monte Carlo
scenario grid that backs those comparisons.
"""

from .compare import (
    ComparisonResult,
    EffectSummary,
    NiCurve,
    NiVerdict,
    OneStepUpResult,
    SubgroupComparison,
    compare_resampled,
    compare_scale_factor,
    compare_variance_difference,
    ni_curve,
    ni_test,
    ni_test_resampled,
    one_step_up,
    scale_factor_w,
    subgroup_compare,
    summarize_effects,
)
from .exceptions import (
    ComputationError,
    DidniError,
    RankDeficientError,
    ValidationError,
)
from .linmod import DesignMatrix, FitResult, OlsSolver, ols_fit, partial_r2
from .panel import (
    DidModelSpec,
    PanelDataset,
    PsplineFit,
    TrendSpec,
    build_design,
    pspline_fit,
    rcs_basis,
    trend_from_label,
)
from .power import (
    EmpiricalPower,
    detection_power,
    empirical_power,
    mde,
    ni_power,
    se_inflation_bound,
    two_sample_se,
)
from .simlab import (
    MODEL_ORDER,
    ModelStats,
    ScenarioConfig,
    ScenarioResult,
    generate_panel,
    paper_grid,
    run_grid,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonResult",
    "ComputationError",
    "DesignMatrix",
    "DidModelSpec",
    "DidniError",
    "EffectSummary",
    "EmpiricalPower",
    "FitResult",
    "MODEL_ORDER",
    "ModelStats",
    "NiCurve",
    "NiVerdict",
    "OlsSolver",
    "OneStepUpResult",
    "PanelDataset",
    "PsplineFit",
    "RankDeficientError",
    "ScenarioConfig",
    "ScenarioResult",
    "SubgroupComparison",
    "TrendSpec",
    "ValidationError",
    "build_design",
    "compare_resampled",
    "compare_scale_factor",
    "compare_variance_difference",
    "detection_power",
    "empirical_power",
    "generate_panel",
    "mde",
    "ni_curve",
    "ni_power",
    "ni_test",
    "ni_test_resampled",
    "ols_fit",
    "one_step_up",
    "paper_grid",
    "partial_r2",
    "pspline_fit",
    "rcs_basis",
    "run_grid",
    "run_scenario",
    "scale_factor_w",
    "se_inflation_bound",
    "subgroup_compare",
    "summarize_effects",
    "trend_from_label",
    "two_sample_se",
    "__version__",
]
