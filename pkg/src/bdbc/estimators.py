"""Column-grouping estimators: greedy, convex relaxation and hierarchical.

All three take a sample covariance ``S`` and a number of groups ``k`` and
return an :class:`EstimatorReport` whose grouping defines the block-diagonal
structure.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .blockstruct import ColumnGrouping, block_loglik
from .core_stats import NumericalError, cov_to_corr, logdet_chol, safe_cholesky
from .metrics import silhouette_mean

METHODS = ("greedy", "convex", "hierarchical")
METHOD_ALIASES = {"hier": "hierarchical", "numerical": "convex"}

SIMPLEX_FLOOR = 1e-6
DTD_RIDGE = 1e-10


@dataclass
class EstimatorReport:
    grouping: ColumnGrouping
    objective: float
    iterations: int
    wall_time: float
    method: str
    trace: List[float] = field(default_factory=list)
    relaxed: Optional[np.ndarray] = None

    @property
    def empty_groups(self) -> List[int]:
        return self.grouping.empty_groups

    def to_dict(self, timing=True) -> dict:
        out = {
            "method": self.method,
            "k": self.grouping.k,
            "assignment": [int(v) for v in self.grouping.assignment],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "empty_groups": self.empty_groups,
        }
        if timing:
            out["wall_time"] = float(self.wall_time)
        return out


def canonical_method(method: str) -> str:
    method = METHOD_ALIASES.get(method, method)
    if method not in METHODS:
        raise ValueError(f"unknown estimator {method!r}; choose from {METHODS}")
    return method


def _check_k(k, p):
    if not 1 <= int(k) <= p:
        raise ValueError(f"k must lie in 1..{p}, got {k}")
    return int(k)


def _check_cov(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square covariance matrix, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("covariance has non-finite entries")
    return 0.5 * (S + S.T)


# --------------------------------------------------------------------------
# greedy


def pca_init(corr, k: int, signed: bool = False) -> ColumnGrouping:
    """Assign each variable to the leading principal component with the
    largest loading.

    Eigenvector signs are arbitrary, so loadings are compared by magnitude
    unless ``signed`` is set. Ties go to the lowest component index.
    """
    corr = _check_cov(corr)
    p = corr.shape[0]
    k = _check_k(k, p)
    vals, vecs = np.linalg.eigh(corr)
    order = np.argsort(-vals, kind="stable")[:k]
    loadings = vecs[:, order]
    if not signed:
        loadings = np.abs(loadings)
    return ColumnGrouping(np.argmax(loadings, axis=1), k)


class _BlockScores:
    """Cached per-group log-likelihood contributions for single-row moves."""

    def __init__(self, S):
        self.S = S
        self.cache = {}

    def score(self, members) -> float:
        key = tuple(members)
        if not key:
            return 0.0
        val = self.cache.get(key)
        if val is None:
            idx = np.fromiter(key, dtype=np.int64)
            block = self.S[np.ix_(idx, idx)]
            chol = safe_cholesky(block)
            tr = float(np.trace(scipy.linalg.cho_solve((chol, True), block, check_finite=False)))
            val = -0.5 * logdet_chol(chol) - 0.5 * tr
            self.cache[key] = val
        return val


def greedy_estimate(S, k: int, max_sweeps: int = 100, init: Optional[ColumnGrouping] = None) -> EstimatorReport:
    """Coordinate-wise reassignment of variables to groups.

    Starting from :func:`pca_init` on the correlation matrix, each sweep
    visits the variables in order and moves each one to the group that
    maximizes the block log-likelihood, holding the others fixed.
    """
    t0 = time.perf_counter()
    S = _check_cov(S)
    p = S.shape[0]
    k = _check_k(k, p)
    grouping = init if init is not None else pca_init(cov_to_corr(S), k)
    assign = grouping.assignment.copy()
    members = [sorted(np.flatnonzero(assign == g).tolist()) for g in range(k)]
    scores = _BlockScores(S)
    contrib = [scores.score(m) for m in members]
    total = sum(contrib)
    trace = [total]
    sweeps = 0
    if k > 1:
        for _ in range(max_sweeps):
            sweeps += 1
            changed = False
            for j in range(p):
                a = assign[j]
                without = [m for m in members[a] if m != j]
                base = total - contrib[a] + scores.score(without)
                best_g, best_val = a, total
                for g in range(k):
                    if g == a:
                        continue
                    cand = base - contrib[g] + scores.score(sorted(members[g] + [j]))
                    if cand > best_val:
                        best_g, best_val = g, cand
                if best_g != a:
                    members[a] = without
                    members[best_g] = sorted(members[best_g] + [j])
                    contrib[a] = scores.score(members[a])
                    contrib[best_g] = scores.score(members[best_g])
                    assign[j] = best_g
                    new_total = sum(contrib)
                    if new_total < total - 1e-9 * (1.0 + abs(total)):
                        raise AssertionError("greedy objective decreased")
                    total = new_total
                    trace.append(total)
                    changed = True
            if not changed:
                break
    final = ColumnGrouping(assign, k)
    return EstimatorReport(final, block_loglik(S, final), sweeps, time.perf_counter() - t0, "greedy", trace)


# --------------------------------------------------------------------------
# convex relaxation


def project_rows_to_simplex(d, floor: float = SIMPLEX_FLOOR) -> np.ndarray:
    """Clamp negative entries, renormalize rows, then lift every entry to at
    least ``floor`` while keeping unit row sums."""
    d = np.clip(np.asarray(d, dtype=float), 0.0, None)
    k = d.shape[1]
    sums = d.sum(axis=1, keepdims=True)
    uniform = sums[:, 0] <= 0
    d = np.where(sums > 0, d / np.where(sums > 0, sums, 1.0), 1.0 / k)
    d[uniform] = 1.0 / k
    return floor + (1.0 - k * floor) * d


class RelaxedObjective:
    """Penalized relaxed log-likelihood in precision form and its gradient.

    ``D`` is a p x K matrix with rows on the simplex. The structured
    precision is ``P * (D D^T)`` (Hadamard) with ``P`` the inverse of S.

    ``gamma`` rewards near-binary rows. ``lam`` multiplies ``log|D^T D|``,
    which is -inf at the uniform solution, so a positive ``lam`` pushes the
    columns apart; a negative ``lam`` gives the opposite-sign penalty.
    """

    def __init__(self, S, gamma=1.0, lam=1.0):
        S = _check_cov(S)
        self.S = S
        self.p = S.shape[0]
        chol = safe_cholesky(S)
        self.P = scipy.linalg.cho_solve((chol, True), np.eye(self.p), check_finite=False)
        self.P = 0.5 * (self.P + self.P.T)
        self.M = self.P * S
        self.gamma = float(gamma)
        self.lam = float(lam)

    def _dtd(self, D):
        return D.T @ D + DTD_RIDGE * np.eye(D.shape[1])

    def value(self, D) -> float:
        theta = self.P * (D @ D.T)
        try:
            ld_theta = logdet_chol(scipy.linalg.cholesky(theta, lower=True, check_finite=False))
        except np.linalg.LinAlgError:
            return -math.inf
        sign, ld_dtd = np.linalg.slogdet(self._dtd(D))
        if sign <= 0:
            return -math.inf
        fit = 0.5 * ld_theta - 0.5 * float(np.einsum("ik,ij,jk->", D, self.M, D))
        return fit + self.gamma * (float(np.sum(D * D)) - self.p) + self.lam * ld_dtd

    def grad_column(self, D, k) -> np.ndarray:
        theta = self.P * (D @ D.T)
        chol = safe_cholesky(theta)
        T = scipy.linalg.cho_solve((chol, True), np.eye(self.p), check_finite=False)
        dk = D[:, k]
        g = (T * self.P) @ dk - self.M @ dk + 2.0 * self.gamma * dk
        g += 2.0 * self.lam * np.linalg.solve(self._dtd(D), D.T)[k]
        return g

    def grad(self, D) -> np.ndarray:
        return np.column_stack([self.grad_column(D, k) for k in range(D.shape[1])])


def relaxed_init(S, k: int) -> np.ndarray:
    """Soft start from the magnitudes of the leading correlation eigenvectors."""
    vals, vecs = np.linalg.eigh(cov_to_corr(S))
    order = np.argsort(-vals, kind="stable")[:k]
    return project_rows_to_simplex(np.abs(vecs[:, order]))


def convex_relax_estimate(
    S,
    k: int,
    gamma: float = 1.0,
    lam: float = 1.0,
    omega: float = 0.1,
    max_iter: int = 1000,
    tol: float = 1e-6,
    init: Optional[np.ndarray] = None,
) -> EstimatorReport:
    """Cyclic projected gradient ascent on the relaxed penalized objective,
    rounded to a hard grouping by row-wise argmax."""
    t0 = time.perf_counter()
    if omega <= 0:
        raise ValueError("learning rate omega must be positive")
    S = _check_cov(S)
    p = S.shape[0]
    k = _check_k(k, p)
    obj = RelaxedObjective(S, gamma, lam)
    D = relaxed_init(S, k) if init is None else project_rows_to_simplex(init)
    value = obj.value(D)
    trace = [value]
    it = 0
    for it in range(1, max_iter + 1):
        for col in range(k):
            D[:, col] += omega * obj.grad_column(D, col)
            D = project_rows_to_simplex(D)
        new_value = obj.value(D)
        if not np.isfinite(new_value):
            raise NumericalError(f"relaxed objective became non-finite at iteration {it}; reduce omega")
        trace.append(new_value)
        done = abs(new_value - value) < tol
        value = new_value
        if done:
            break
    grouping = ColumnGrouping(np.argmax(D, axis=1), k)
    return EstimatorReport(grouping, block_loglik(S, grouping), it, time.perf_counter() - t0, "convex", trace, D)


# --------------------------------------------------------------------------
# hierarchical


def correlation_features(S) -> np.ndarray:
    """Absolute correlation matrix; row i is the feature vector of variable i."""
    return np.abs(cov_to_corr(_check_cov(S)))


def feature_distances(S) -> np.ndarray:
    r = correlation_features(S)
    sq = np.sum(r * r, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * r @ r.T
    d = np.sqrt(np.clip(d2, 0.0, None))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def average_linkage(dist) -> np.ndarray:
    """Agglomerative clustering with unweighted average linkage.

    Returns a (p-1) x 3 array of merges ``(slot_a, slot_b, height)`` where
    ``slot_a < slot_b`` are the lowest variable indices of the two clusters;
    the merged cluster keeps ``slot_a``. Ties are broken by the smallest
    ``(slot_a, slot_b)`` pair.
    """
    d = np.array(dist, dtype=float)
    p = d.shape[0]
    sizes = np.ones(p)
    np.fill_diagonal(d, np.inf)
    merges = np.zeros((max(p - 1, 0), 3))
    for step in range(p - 1):
        flat = int(np.argmin(d))
        i, j = divmod(flat, p)
        if i > j:
            i, j = j, i
        height = d[i, j]
        merges[step] = (i, j, height)
        row = (sizes[i] * d[i] + sizes[j] * d[j]) / (sizes[i] + sizes[j])
        d[i, :] = row
        d[:, i] = row
        d[i, i] = np.inf
        d[j, :] = np.inf
        d[:, j] = np.inf
        sizes[i] += sizes[j]
    return merges


def cut_merges(merges, p: int, k: int) -> ColumnGrouping:
    """Apply the first ``p - k`` merges; groups are numbered by their
    smallest member."""
    parent = np.arange(p)
    for a, b, _ in merges[: p - k]:
        a, b = int(a), int(b)
        parent[parent == b] = a
    _, labels = np.unique(parent, return_inverse=True)
    return ColumnGrouping(labels, k)


def hierarchical_estimate(S, k: int) -> EstimatorReport:
    """Average-linkage clustering of variables on their absolute-correlation
    profiles, cut at ``k`` groups."""
    t0 = time.perf_counter()
    S = _check_cov(S)
    p = S.shape[0]
    k = _check_k(k, p)
    merges = average_linkage(feature_distances(S))
    grouping = cut_merges(merges, p, k)
    return EstimatorReport(grouping, block_loglik(S, grouping), p - k, time.perf_counter() - t0, "hierarchical")


def default_k_range(p: int) -> Tuple[int, int]:
    return 2, max(2, min(p - 1, math.ceil(2 * math.sqrt(p)) + 2))


def select_k_silhouette(S, k_min: Optional[int] = None, k_max: Optional[int] = None):
    """Pick the number of groups maximizing the mean silhouette of the
    hierarchical cut. Returns ``(k, [(k, score), ...])``; ties go to the
    smallest k."""
    S = _check_cov(S)
    p = S.shape[0]
    lo, hi = default_k_range(p)
    k_min = lo if k_min is None else int(k_min)
    k_max = hi if k_max is None else int(k_max)
    if not 2 <= k_min <= k_max <= p - 1:
        raise ValueError(f"invalid k range [{k_min}, {k_max}] for p={p}")
    dist = feature_distances(S)
    merges = average_linkage(dist)
    scores = []
    for k in range(k_min, k_max + 1):
        labels = cut_merges(merges, p, k).assignment
        scores.append((k, silhouette_mean(dist, labels)))
    best_k, best = scores[0]
    for k, s in scores[1:]:
        if s > best:
            best_k, best = k, s
    return best_k, scores


def estimate(S, k: int, method: str = "hierarchical", **options) -> EstimatorReport:
    method = canonical_method(method)
    if method == "greedy":
        return greedy_estimate(S, k, **options)
    if method == "convex":
        return convex_relax_estimate(S, k, **options)
    return hierarchical_estimate(S, k)
