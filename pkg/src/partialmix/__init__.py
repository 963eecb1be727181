"""Model-based clustering of partially observed data with t mixtures."""

from .aecm import FitConfig, FitError, FitResult, Responsibilities, fit
from .data import Dataset, complete_case_subset, load_csv, pattern_groups
from .evaluation import adjusted_rand_index, rand_index
from .selection import bic, free_param_count, select_k
from .simulation import SimulationSpec, simulate
from .tdist import MixtureParams

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FitConfig",
    "FitError",
    "FitResult",
    "MixtureParams",
    "Responsibilities",
    "SimulationSpec",
    "adjusted_rand_index",
    "bic",
    "complete_case_subset",
    "fit",
    "free_param_count",
    "load_csv",
    "pattern_groups",
    "rand_index",
    "select_k",
    "simulate",
]
