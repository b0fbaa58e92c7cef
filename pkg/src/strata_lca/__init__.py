"""Age-stratified latent class analysis with cross-stratum cluster alignment."""

__version__ = "0.1.0"

from .cohort import (Cohort, ConditionCatalog, StrataSpec, Stratum,  # noqa: E402
                     condition_prevalence, filter_eligible, load_cohort, stratify)
from .lca import FitConfig, FitResult, LcaModel, fit_best, fit_em  # noqa: E402
from .alignment import (build_cluster_sets, chain_alignments,  # noqa: E402
                        chebyshev_distance, greedy_match, similarity)

__all__ = [
    "Cohort", "ConditionCatalog", "StrataSpec", "Stratum", "condition_prevalence",
    "filter_eligible", "load_cohort", "stratify", "FitConfig", "FitResult", "LcaModel",
    "fit_best", "fit_em", "build_cluster_sets", "chain_alignments",
    "chebyshev_distance", "greedy_match", "similarity",
]
