"""Nonparametric Bayesian meta-analysis of median survival summaries.

Cohort event-time distributions get correlated Polya-tree priors anchored
at the reported (l, m, h) triples; see the README for the model and the
command-line workflow.
"""

__version__ = "0.1.0"

from .data_model import CohortSummary, parse_cohorts
from .kernel_prior import CovariateVector, KernelWeights
from .sampler import FitConfig, PosteriorDraws, load_fit, run_chain, save_fit
from .summaries import QuerySpec, summarize

__all__ = [
    "CohortSummary",
    "CovariateVector",
    "FitConfig",
    "KernelWeights",
    "PosteriorDraws",
    "QuerySpec",
    "load_fit",
    "parse_cohorts",
    "run_chain",
    "save_fit",
    "summarize",
    "__version__",
]
