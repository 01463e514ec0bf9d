"""Gaussian bi-clustering with general block-diagonal covariance matrices."""
from .blockstruct import BlockCovariance, ColumnGrouping, block_loglik, project_block_diagonal
from .core_stats import DataMatrix, NumericalError, SampleStats, compute_stats, gaussian_logpdf, standardize
from .estimators import (
    EstimatorReport,
    convex_relax_estimate,
    estimate,
    greedy_estimate,
    hierarchical_estimate,
    pca_init,
    select_k_silhouette,
)
from .metrics import ari, mape, matched_accuracy, partition_match, silhouette_mean
from .mixture import DegenerateComponentError, FitReport, MixtureModel, bic, e_step, em_fit, kmeans, m_step, select_g

__version__ = "0.1.0"
