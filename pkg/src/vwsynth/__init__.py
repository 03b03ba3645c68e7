"""Differentially private synthetic count data from vector-weighted pseudo posteriors."""

__version__ = "0.1.0"

from .lipschitz import LipschitzReport, lipschitz_report, loglik_magnitude_matrix, loo_ratio_matrix, summarize
from .model import Dataset, Family, ModelSpec, PriorConfig, Theta, log_lik_record, log_prior, pseudo_log_lik
from .reweight import ReweightConfig, ReweightOutcome, reweight_formula, reweight_with_refit
from .sampler import ParameterDraws, SamplerConfig, sample_pseudo_posterior
from .synth import SyntheticBundle, UtilityTable, generate, utility_table
from .weights import Scheme, WeightVector, cw_weights, lw_weights, sw_weights, unit_weights

__all__ = [
    "Dataset", "Family", "LipschitzReport", "ModelSpec", "ParameterDraws", "PriorConfig",
    "ReweightConfig", "ReweightOutcome", "SamplerConfig", "Scheme", "SyntheticBundle", "Theta",
    "UtilityTable", "WeightVector", "cw_weights", "generate", "lipschitz_report", "log_lik_record",
    "log_prior", "loglik_magnitude_matrix", "loo_ratio_matrix", "lw_weights", "pseudo_log_lik",
    "reweight_formula", "reweight_with_refit", "sample_pseudo_posterior", "summarize", "sw_weights",
    "unit_weights", "utility_table",
]
