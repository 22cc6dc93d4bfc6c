"""Aggregation-based reduction of Markov chains with certified error bounds."""

__version__ = "0.1.0"

from .core import ChainError, MarkovChain, ctmc_transient, dtmc_transient, stationary, validate
from .aggregation import Partition, ReducedModel, build_model, induced_dynamics, median_dynamics
from .bounds import ctmc_bounds, dtmc_bounds, error_matrix, stationary_bound, tightness_instance
from .lumpability import coarsest_exactly_lumpable
from .search import refine_almost_exact, svd_dir, svd_sgn
from .schur import schur_dynamic_exact

__all__ = [
    "ChainError", "MarkovChain", "Partition", "ReducedModel", "build_model",
    "coarsest_exactly_lumpable", "ctmc_bounds", "ctmc_transient", "dtmc_bounds",
    "dtmc_transient", "error_matrix", "induced_dynamics", "median_dynamics",
    "refine_almost_exact", "schur_dynamic_exact", "stationary", "stationary_bound",
    "svd_dir", "svd_sgn", "tightness_instance", "validate",
]
