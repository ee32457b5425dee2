"""Propensity score matching for observational cohorts."""

__version__ = "0.1.0"

from .cohort import Cohort, CovariateSpec, describe, glioma_schema, load_cohort, load_schema
from .logit import LogisticFit, design_matrix, fit, predict, wald_test
from .matching import Caliper, MatchedSample, PropensityScores, estimate_propensity, match, matched_cohort
from .balance import balance_report, ps_histograms, smd
from .effects import BootstrapConfig, EffectEstimate, estimate_effects, odds_ratio

__all__ = [
    "Cohort", "CovariateSpec", "describe", "glioma_schema", "load_cohort", "load_schema",
    "LogisticFit", "design_matrix", "fit", "predict", "wald_test",
    "Caliper", "MatchedSample", "PropensityScores", "estimate_propensity", "match", "matched_cohort",
    "balance_report", "ps_histograms", "smd",
    "BootstrapConfig", "EffectEstimate", "estimate_effects", "odds_ratio",
]
