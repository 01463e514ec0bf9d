"""Clustering and covariance-recovery metrics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb

from .blockstruct import ColumnGrouping

EXHAUSTIVE_MAX_LABELS = 8


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_levels: np.ndarray
    col_levels: np.ndarray

    @classmethod
    def from_labels(cls, labels_a, labels_b) -> "ContingencyTable":
        a = np.asarray(labels_a)
        b = np.asarray(labels_b)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError(f"label vectors differ in length: {a.shape} vs {b.shape}")
        ra, ia = np.unique(a, return_inverse=True)
        rb, ib = np.unique(b, return_inverse=True)
        counts = np.zeros((ra.size, rb.size), dtype=np.int64)
        np.add.at(counts, (ia, ib), 1)
        return cls(counts, ra, rb)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def ari(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index."""
    table = ContingencyTable.from_labels(labels_a, labels_b)
    n = table.n
    if n == 0:
        raise ValueError("empty labelings")
    index = comb(table.counts, 2).sum()
    sum_a = comb(table.row_sums, 2).sum()
    sum_b = comb(table.col_sums, 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0:
        # both labelings trivial (all one cluster, or all singletons): identical partitions
        return 1.0
    return float((index - expected) / denom)


def matched_accuracy(truth, predicted) -> float:
    """Best fraction of agreeing labels over one-to-one label mappings."""
    table = ContingencyTable.from_labels(predicted, truth)
    counts = table.counts
    n = table.n
    if n == 0:
        raise ValueError("empty labelings")
    r, c = counts.shape
    if max(r, c) <= EXHAUSTIVE_MAX_LABELS:
        best = 0
        if r <= c:
            for cols in itertools.permutations(range(c), r):
                best = max(best, int(counts[np.arange(r), cols].sum()))
        else:
            for rows in itertools.permutations(range(r), c):
                best = max(best, int(counts[rows, np.arange(c)].sum()))
    else:
        rows, cols = linear_sum_assignment(counts, maximize=True)
        best = int(counts[rows, cols].sum())
    return best / n


def mape(truth, estimate) -> float:
    """Percentage error of a covariance estimate, signed denominator as printed."""
    t = np.asarray(truth, dtype=float)
    e = np.asarray(estimate, dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {e.shape}")
    denom = t.sum()
    if denom == 0:
        raise ValueError("entries of the true matrix sum to zero")
    return float(100.0 * np.abs(t - e).sum() / denom)


def partition_match(a: ColumnGrouping, b: ColumnGrouping) -> bool:
    if a.p != b.p:
        return False
    return a.canonical() == b.canonical()


def silhouette_samples(dist, labels) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    labels = np.asarray(labels)
    levels = np.unique(labels)
    if levels.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    onehot = (labels[:, None] == levels[None, :]).astype(float)
    sizes = onehot.sum(axis=0)
    sums = d @ onehot
    own = np.searchsorted(levels, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(len(labels)), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(len(labels)), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.zeros(len(labels))
    ok = (own_size > 1) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return s


def silhouette_mean(dist, labels) -> float:
    """Mean silhouette coefficient over a precomputed distance matrix.

    Singletons score 0, and so do points with a = b = 0.
    """
    return float(silhouette_samples(dist, labels).mean())
