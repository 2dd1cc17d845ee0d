"""Discrete-time Mixed Hazard models identified from layoff-notice variation."""

from mixhazard.core import (
    DurationRecord,
    ExitRateTable,
    LogLogistic,
    ModelParams,
    SpellData,
    TypeDistribution,
    average_type,
    empirical_exit_rates,
    log_logistic_hazard,
    model_exit_rate,
    type_polynomial,
)
from mixhazard.estimator import (
    GeneralizedSpec,
    GmmResult,
    GmmSpec,
    central_moment_kappas,
    closed_form_identify,
    generalized_identify,
    gmm_estimate,
    individual_moment,
    residual_grid,
)
from mixhazard.propensity import (
    CovariateSpec,
    PropensityModel,
    balance_report,
    fit_propensity,
    ipw_weights,
    trim_by_score,
)

from mixhazard.search import SearchConfig, SearchSolution, calibrate, implied_hazards, simulate_panel, solve
from mixhazard.simlab import Dgp, bin_exit_rates, exact_exit_rates, make_binning_dgp, monte_carlo, simulate

__version__ = "0.1.0"

__all__ = [
    "CovariateSpec", "Dgp", "DurationRecord", "ExitRateTable", "GeneralizedSpec", "GmmResult", "GmmSpec",
    "LogLogistic", "ModelParams", "PropensityModel", "SearchConfig", "SearchSolution", "SpellData",
    "TypeDistribution", "average_type", "balance_report", "bin_exit_rates", "calibrate", "central_moment_kappas",
    "closed_form_identify", "empirical_exit_rates", "exact_exit_rates", "fit_propensity", "generalized_identify",
    "gmm_estimate", "implied_hazards", "individual_moment", "ipw_weights", "log_logistic_hazard",
    "make_binning_dgp", "model_exit_rate", "monte_carlo", "residual_grid", "simulate", "simulate_panel", "solve",
    "trim_by_score", "type_polynomial",
]
