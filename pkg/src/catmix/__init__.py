"""k-modes clustering and latent class analysis for binary indicator data."""

__version__ = "0.1.0"

from .dataset import CategoricalDataset, DataError, PatternTable, Schema, collapse_patterns, describe, load_csv
from .kmodes import KModesConfig, KModesModel, fit_kmodes, silhouette_width, simple_matching_distance, sweep_k
from .lca import LcaFit, LcaParams, MultistartReport, fit_em, fit_multistart, log_likelihood, simulate

__all__ = [
    "CategoricalDataset",
    "DataError",
    "KModesConfig",
    "KModesModel",
    "LcaFit",
    "LcaParams",
    "MultistartReport",
    "PatternTable",
    "Schema",
    "collapse_patterns",
    "describe",
    "fit_em",
    "fit_kmodes",
    "fit_multistart",
    "load_csv",
    "log_likelihood",
    "silhouette_width",
    "simple_matching_distance",
    "simulate",
    "sweep_k",
]
