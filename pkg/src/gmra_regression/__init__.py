"""Multiscale regression on data near low-dimensional manifolds.

A cover tree on one half of the sample defines nested cells; local PCA
charts and truncated local polynomial fits on the other half give
piecewise estimators on uniform or adaptively thresholded partitions.
"""
from .adaptive import (DeltaMap, ProperSubtree, adaptive_partition, compute_deltas,
                       default_kappa, smallest_proper_subtree, threshold)
from .bench import (ExperimentConfig, RateReport, SlopeFit, evaluate_mse, fit_slope,
                    run_experiment, timing_profile)
from .covertree import CoverTree, build_cover_tree, check_invariants
from .dataset import (Dataset, SplitIndices, SyntheticSpec, generate, load_csv, save_csv,
                      split)
from .estimator import (Fits, GlobalEstimator, LocalEstimator, Partition, assemble_uniform,
                        choose_jstar, fit_all, fit_local, truncate)
from .exceptions import (DatasetIOError, ExperimentError, MalformedFileError,
                         ParameterError)
from .gmra import Charts, LocalChart, cell_statistics, compute_charts, local_pca
from .mstree import (MultiscaleTree, ValidationReport, check_partition, derive_cells,
                     validate_assumptions)
from .regressor import GMRARegressor, load_model

__version__ = "0.1.0"

__all__ = [
    "Charts", "CoverTree", "Dataset", "DatasetIOError", "DeltaMap", "ExperimentConfig",
    "ExperimentError", "Fits", "GMRARegressor", "GlobalEstimator", "LocalChart",
    "LocalEstimator", "MalformedFileError", "MultiscaleTree", "ParameterError", "Partition",
    "ProperSubtree", "RateReport", "SlopeFit", "SplitIndices", "SyntheticSpec",
    "ValidationReport", "adaptive_partition", "assemble_uniform", "build_cover_tree",
    "cell_statistics", "check_invariants", "check_partition", "choose_jstar",
    "compute_charts", "compute_deltas", "default_kappa", "derive_cells", "evaluate_mse",
    "fit_all", "fit_local", "fit_slope", "generate", "load_csv", "load_model", "local_pca",
    "run_experiment", "save_csv", "smallest_proper_subtree", "split", "threshold",
    "timing_profile", "truncate", "validate_assumptions",
]
