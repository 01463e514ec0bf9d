"""Sample statistics and Gaussian density primitives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

RIDGE_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)
LOG_2PI = float(np.log(2.0 * np.pi))


class NumericalError(RuntimeError):
    """A factorization or likelihood evaluation failed beyond recovery."""


@dataclass(frozen=True)
class DataMatrix:
    values: np.ndarray
    row_labels: Optional[Sequence[str]] = None
    col_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"data must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("data contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.row_labels is not None:
            if len(self.row_labels) != values.shape[0]:
                raise ValueError("row_labels length does not match number of rows")
            object.__setattr__(self, "row_labels", list(self.row_labels))
        if self.col_names is not None:
            if len(self.col_names) != values.shape[1]:
                raise ValueError("col_names length does not match number of columns")
            object.__setattr__(self, "col_names", list(self.col_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def select_columns(self, idx) -> "DataMatrix":
        idx = list(idx)
        names = None if self.col_names is None else [self.col_names[i] for i in idx]
        return DataMatrix(self.values[:, idx], self.row_labels, names)


@dataclass(frozen=True)
class SampleStats:
    mean: np.ndarray
    cov: np.ndarray
    corr: np.ndarray
    n: float


def as_array(data) -> np.ndarray:
    if isinstance(data, DataMatrix):
        return data.values
    return np.asarray(data, dtype=float)


def cov_to_corr(cov: np.ndarray) -> np.ndarray:
    """Correlation matrix from a covariance matrix.

    Zero-variance variables get a unit diagonal and zero off-diagonal entries.
    """
    cov = np.asarray(cov, dtype=float)
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ok = sd > 0
    inv = np.zeros_like(sd)
    inv[ok] = 1.0 / sd[ok]
    corr = cov * np.outer(inv, inv)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def compute_stats(data, weights=None) -> SampleStats:
    """Weighted mean, MLE covariance (divisor = total weight) and correlation."""
    x = as_array(data)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("compute_stats needs a non-empty N x p matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite entries")
    if weights is None:
        w = np.ones(x.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (x.shape[0],):
            raise ValueError("weights must have one entry per row")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    with np.errstate(over="ignore", invalid="ignore"):
        mean = w @ x / total
        centered = x - mean
        cov = (centered * w[:, None]).T @ centered / total
    if not np.all(np.isfinite(cov)):
        raise NumericalError("sample covariance overflowed; rescale the data")
    cov = 0.5 * (cov + cov.T)
    return SampleStats(mean=mean, cov=cov, corr=cov_to_corr(cov), n=float(total))


def safe_cholesky(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with escalating ridge ``eps * trace/p * I``."""
    mat = np.asarray(mat, dtype=float)
    p = mat.shape[0]
    scale = np.trace(mat) / p if p else 0.0
    if not np.isfinite(scale):
        raise NumericalError("matrix has non-finite entries")
    if scale <= 0:
        scale = 1.0
    for eps in RIDGE_SCHEDULE:
        try:
            target = mat if eps == 0.0 else mat + eps * scale * np.eye(p)
            return scipy.linalg.cholesky(target, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"Cholesky factorization failed for {p}x{p} matrix after ridge 1e-6")


def logdet_chol(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_logpdf(x, mean, cov) -> float | np.ndarray:
    """Multivariate normal log density.

    ``x`` may be a single p-vector or an N x p matrix, in which case a vector
    of N log densities is returned.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = safe_cholesky(cov)
    return _logpdf_from_chol(x, mean, chol)


def _logpdf_from_chol(x, mean, chol):
    single = x.ndim == 1
    xs = np.atleast_2d(x) - mean
    p = chol.shape[0]
    z = scipy.linalg.solve_triangular(chol, xs.T, lower=True, check_finite=False)
    maha = np.sum(z * z, axis=0)
    out = -0.5 * (p * LOG_2PI + logdet_chol(chol) + maha)
    return float(out[0]) if single else out


def standardize(data: DataMatrix) -> DataMatrix:
    """Center each column and scale it to unit population variance."""
    x = as_array(data)
    centered = x - x.mean(axis=0)
    sd = np.sqrt(np.mean(centered**2, axis=0))
    sd[sd <= 1e-12 * (1.0 + np.abs(x).max(axis=0))] = 1.0
    out = centered / sd
    if isinstance(data, DataMatrix):
        return DataMatrix(out, data.row_labels, data.col_names)
    return DataMatrix(out)
