"""Correlation-network discovery with a two-component beta mixture on squared sines."""

__version__ = "0.1.0"

from .angles import DataMatrix, PairIndex, ZVector, ingest, pairwise_z, standardize, z_to_abs_r
from .exceptions import BetaMixError, DegenerateColumnError, DomainError, InputError, NumericError
from .graph import (
    ClusterAssignment,
    Graph,
    bayes_edges,
    centrality_clusters,
    classify_majority,
    frequentist_edges,
    graph_stats,
    select_predictors,
)
from .mixture import FitOptions, FitResult, MixtureParams, e_step, fit, fit_summary, log_likelihood, m_step
from .simulation import CorrelationSpec, Scenario, ScenarioResult, build_correlation, run_scenario, sample_mvn
from .special import beta_quantile, digamma, reg_inc_beta, trigamma

__all__ = [
    "__version__",
    "DataMatrix", "PairIndex", "ZVector", "ingest", "pairwise_z", "standardize", "z_to_abs_r",
    "BetaMixError", "DegenerateColumnError", "DomainError", "InputError", "NumericError",
    "ClusterAssignment", "Graph", "bayes_edges", "centrality_clusters", "classify_majority",
    "frequentist_edges", "graph_stats", "select_predictors",
    "FitOptions", "FitResult", "MixtureParams", "e_step", "fit", "fit_summary", "log_likelihood", "m_step",
    "CorrelationSpec", "Scenario", "ScenarioResult", "build_correlation", "run_scenario", "sample_mvn",
    "beta_quantile", "digamma", "reg_inc_beta", "trigamma",
]
