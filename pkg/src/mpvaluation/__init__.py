"""Multi-period valuation of liability cash flows on scenario trees and in the
Gaussian large-portfolio limit."""

__version__ = "0.1.0"

from .dist import (
    BoundedDensity,
    CompactSupport,
    PointMass,
    SpectralMeasure,
    TailUniform,
    WeightedSample,
    avar_at_level,
    quantile,
    quantile_integral,
    spectral_risk,
    var_at_level,
)
from .gaussian import (
    GaussianModel,
    VarianceSchedule,
    build_tree,
    conditional_law,
    conditional_variance,
    limit_value,
    load_model,
    save_model,
    variance_schedule,
)
from .mappings import (
    CoC,
    GeneralLL,
    MeanStd,
    OneStepMapping,
    QuantileMixture,
    ValuationSchedule,
    apply_mapping,
    coc_ll,
    growth_bound,
    mapping_of_standard_normal,
    power_utility,
)
from .ordering import DeltaProfile, compare_filtrations, is_majorized_feasible, lemma_check, objective
from .portfolio import (
    Gamma,
    Lognormal,
    PortfolioModel,
    clt_scaling,
    convergence_experiment,
    empirical_value,
    gaussian_limit_of,
    simulate_cashflow,
)
from .tree import ScenarioTree, ValuationResult, affine_transform, backward_value, load_tree, path_law, save_tree

__all__ = [
    "__version__",
    "BoundedDensity",
    "CompactSupport",
    "PointMass",
    "SpectralMeasure",
    "TailUniform",
    "WeightedSample",
    "avar_at_level",
    "quantile",
    "quantile_integral",
    "spectral_risk",
    "var_at_level",
    "GaussianModel",
    "VarianceSchedule",
    "build_tree",
    "conditional_law",
    "conditional_variance",
    "limit_value",
    "load_model",
    "save_model",
    "variance_schedule",
    "CoC",
    "GeneralLL",
    "MeanStd",
    "OneStepMapping",
    "QuantileMixture",
    "ValuationSchedule",
    "apply_mapping",
    "coc_ll",
    "growth_bound",
    "mapping_of_standard_normal",
    "power_utility",
    "Gamma",
    "Lognormal",
    "PortfolioModel",
    "clt_scaling",
    "convergence_experiment",
    "empirical_value",
    "gaussian_limit_of",
    "simulate_cashflow",
    "DeltaProfile",
    "compare_filtrations",
    "is_majorized_feasible",
    "lemma_check",
    "objective",
    "ScenarioTree",
    "ValuationResult",
    "affine_transform",
    "backward_value",
    "load_tree",
    "path_law",
    "save_tree",
]
