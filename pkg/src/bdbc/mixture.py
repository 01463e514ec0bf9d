"""Gaussian mixture with per-component block-diagonal covariances, fitted by EM."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .blockstruct import BlockCovariance, ColumnGrouping, block_loglik, project_block_diagonal
from .core_stats import LOG_2PI, NumericalError, as_array, compute_stats, logdet_chol, safe_cholesky
from .estimators import canonical_method, estimate, select_k_silhouette
from .rng import make_rng


class DegenerateComponentError(NumericalError):
    pass


# --------------------------------------------------------------------------
# k-means


def _wcss(x, labels, centers):
    return float(np.sum((x - centers[labels]) ** 2))


def _kmeans_pp(x, g, rng):
    n = x.shape[0]
    centers = np.empty((g, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, g):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[c] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(x, centers, max_iter=300):
    labels = None
    for _ in range(max_iter):
        d2 = np.sum(x**2, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers**2, axis=1)[None, :]
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-fitted point
                far = int(np.argmax(np.sum((x - centers[labels]) ** 2, axis=1)))
                centers[c] = x[far]
                labels[far] = c
    return labels, centers


def kmeans(data, g: int, restarts: int = 10, seed=0) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by
    within-cluster sum of squares."""
    x = as_array(data)
    n = x.shape[0]
    if g < 1 or g > n:
        raise ValueError(f"cannot form {g} clusters from {n} rows")
    if g == 1:
        return np.zeros(n, dtype=int)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    best_labels, best = None, np.inf
    for _ in range(max(1, restarts)):
        labels, centers = _lloyd(x, _kmeans_pp(x, g, rng))
        score = _wcss(x, labels, centers)
        if score < best:
            best, best_labels = score, labels
    return best_labels


# --------------------------------------------------------------------------
# model


@dataclass
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: List[BlockCovariance]

    @property
    def g(self) -> int:
        return len(self.weights)

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def groupings(self) -> List[ColumnGrouping]:
        return [c.grouping for c in self.covariances]

    def component_logpdf(self, x) -> np.ndarray:
        """N x G matrix of log N(x_i; mu_g, Sigma_g), evaluated block by block."""
        x = np.atleast_2d(as_array(x))
        out = np.zeros((x.shape[0], self.g))
        for g, cov in enumerate(self.covariances):
            centered = x - self.means[g]
            for idx, block in zip(cov.grouping.groups(), cov.blocks):
                if idx.size == 0:
                    continue
                chol = safe_cholesky(block)
                z = scipy.linalg.solve_triangular(chol, centered[:, idx].T, lower=True, check_finite=False)
                out[:, g] -= 0.5 * (idx.size * LOG_2PI + logdet_chol(chol) + np.sum(z * z, axis=0))
        return out

    def permuted(self, perm) -> "MixtureModel":
        perm = list(perm)
        return MixtureModel(self.weights[perm], self.means[perm], [self.covariances[i] for i in perm])

    def n_parameters(self) -> int:
        nu = (self.g - 1) + self.g * self.p
        for cov in self.covariances:
            nu += int(sum(s * (s + 1) // 2 for s in cov.grouping.sizes()))
        return nu

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "groupings": [c.grouping.to_dict() for c in self.covariances],
            "covariances": [c.expanded().tolist() for c in self.covariances],
        }


@dataclass
class FitReport:
    model: MixtureModel
    responsibilities: np.ndarray
    loglik_trace: List[float]
    converged: bool
    iterations: int
    seed: int
    n: int
    wall_time: float = 0.0
    method: str = "hierarchical"

    @property
    def row_assignment(self) -> np.ndarray:
        return np.argmax(self.responsibilities, axis=1)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def bic(self) -> float:
        return bic(self)

    def to_dict(self, timing=True) -> dict:
        out = {
            "schema": 1,
            "method": self.method,
            "g": self.model.g,
            "seed": int(self.seed),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "loglik": float(self.loglik),
            "bic": float(self.bic),
            "n_parameters": self.model.n_parameters(),
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "row_assignment": [int(v) for v in self.row_assignment],
            "model": self.model.to_dict(),
        }
        if timing:
            out["metadata"] = {"wall_time": float(self.wall_time)}
        return out


# --------------------------------------------------------------------------
# EM steps


def e_step(data, model: MixtureModel):
    """Responsibilities and observed-data log-likelihood, in log space."""
    x = as_array(data)
    logp = model.component_logpdf(x) + np.log(model.weights)[None, :]
    row_ll = logsumexp(logp, axis=1)
    bad = np.flatnonzero(~np.isfinite(row_ll))
    if bad.size:
        raise NumericalError(f"all components underflow for row {int(bad[0])}")
    resp = np.exp(logp - row_ll[:, None])
    return resp, float(row_ll.sum())


def m_step(
    data,
    responsibilities,
    k: int,
    method: str = "hierarchical",
    previous: Optional[Sequence[ColumnGrouping]] = None,
    k_auto: bool = False,
    estimator_options: Optional[dict] = None,
) -> MixtureModel:
    """Weights, means, weighted MLE covariances and their block projections.

    When ``previous`` groupings are given, a component keeps its previous
    grouping if that fits the new weighted covariance strictly better than
    the estimator's fresh grouping; this keeps every EM step non-decreasing
    in likelihood.
    """
    x = as_array(data)
    resp = np.asarray(responsibilities, dtype=float)
    n = x.shape[0]
    mass = resp.sum(axis=0)
    floor = 10.0 * np.finfo(float).eps * n
    degenerate = np.flatnonzero(mass < floor)
    if degenerate.size:
        raise DegenerateComponentError(f"component {int(degenerate[0])} has responsibility mass {mass[degenerate[0]]:.3g}")
    method = canonical_method(method)
    options = estimator_options or {}
    means, covs = [], []
    for g in range(resp.shape[1]):
        stats = compute_stats(x, resp[:, g])
        kg = k
        if k_auto and stats.cov.shape[0] >= 3:
            kg, _ = select_k_silhouette(stats.cov)
        grouping = estimate(stats.cov, kg, method, **options).grouping
        if previous is not None and previous[g].k == grouping.k and previous[g] != grouping:
            if block_loglik(stats.cov, previous[g]) > block_loglik(stats.cov, grouping):
                grouping = previous[g]
        means.append(stats.mean)
        covs.append(project_block_diagonal(stats.cov, grouping))
    return MixtureModel(mass / n, np.array(means), covs)


def aitken_converged(trace: Sequence[float], tol: float) -> bool:
    """Aitken-extrapolated stopping rule on the last three log-likelihoods."""
    if len(trace) < 3:
        return False
    l0, l1, l2 = trace[-3], trace[-2], trace[-1]
    if l2 == l1:
        return True
    if l1 == l0:
        return False
    a = (l2 - l1) / (l1 - l0)
    if a >= 1.0:
        return False
    l_inf = l1 + (l2 - l1) / (1.0 - a)
    return abs(l_inf - l2) < tol


def em_fit(
    data,
    g: int,
    k: int,
    method: str = "hierarchical",
    seed: int = 0,
    max_iter: int = 1000,
    tol: float = 1e-4,
    kmeans_restarts: int = 10,
    start: int = 0,
    keep_incumbent: bool = True,
    k_auto: bool = False,
    estimator_options: Optional[dict] = None,
    init_labels=None,
) -> FitReport:
    """Fit a G-component block-diagonal mixture by EM.

    Initial responsibilities are hard k-means labels drawn from the stream
    keyed by ``(seed, g, start)``. Raises :class:`DegenerateComponentError`
    (carrying the seed in its message) if a component loses all mass.
    """
    t0 = time.perf_counter()
    x = as_array(data)
    n, p = x.shape
    if g < 1 or n <= g:
        raise ValueError(f"need more rows ({n}) than components ({g})")
    if not 1 <= k <= p:
        raise ValueError(f"k must lie in 1..{p}")
    method = canonical_method(method)
    if init_labels is None:
        init_labels = kmeans(x, g, kmeans_restarts, make_rng(seed, g, start))
    resp = np.zeros((n, g))
    resp[np.arange(n), np.asarray(init_labels)] = 1.0
    trace: List[float] = []
    converged = False
    try:
        model = m_step(x, resp, k, method, k_auto=k_auto, estimator_options=estimator_options)
        for _ in range(max_iter):
            resp, ll = e_step(x, model)
            trace.append(ll)
            if len(trace) >= 3 and aitken_converged(trace, tol):
                converged = True
                break
            model = m_step(
                x,
                resp,
                k,
                method,
                previous=model.groupings if keep_incumbent else None,
                k_auto=k_auto,
                estimator_options=estimator_options,
            )
    except NumericalError as exc:
        raise type(exc)(f"{exc} (seed={seed}, g={g}, start={start})") from exc
    return FitReport(model, resp, trace, converged, len(trace), seed, n, time.perf_counter() - t0, method)


def bic(report: FitReport) -> float:
    """2 * loglik - (free parameters) * log N; larger is better."""
    return 2.0 * report.loglik - report.model.n_parameters() * np.log(report.n)


@dataclass
class SelectionRow:
    g: int
    bic: Optional[float]
    loglik: Optional[float]
    converged: bool
    error: Optional[str] = None


def select_g(
    data,
    g_range: Sequence[int] = (1, 2, 3, 4, 5),
    k: int = 1,
    method: str = "hierarchical",
    seed: int = 0,
    replicate_starts: int = 1,
    **fit_options,
):
    """Fit every G in ``g_range`` and keep the BIC-best fit.

    Each G is started ``replicate_starts`` times from independent k-means
    streams; the highest-likelihood start represents that G. Returns
    ``(best_report, [SelectionRow, ...])``.
    """
    g_range = list(g_range)
    if not g_range:
        raise ValueError("g_range is empty")
    best, table = None, []
    for g in g_range:
        fit, err = None, None
        for start in range(max(1, replicate_starts)):
            try:
                cand = em_fit(data, g, k, method, seed=seed, start=start, **fit_options)
            except (NumericalError, ValueError) as exc:
                err = str(exc)
                continue
            if fit is None or cand.loglik > fit.loglik:
                fit = cand
        if fit is None:
            table.append(SelectionRow(g, None, None, False, err))
            continue
        table.append(SelectionRow(g, fit.bic, fit.loglik, fit.converged))
        if best is None or fit.bic > best.bic:
            best = fit
    if best is None:
        raise NumericalError("every fit in the G search failed: " + "; ".join(r.error or "" for r in table))
    return best, table
