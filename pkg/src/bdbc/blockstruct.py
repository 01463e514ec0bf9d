"""Column groupings and the block-diagonal Gaussian log-likelihood."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.linalg

from .core_stats import logdet_chol, safe_cholesky


@dataclass(frozen=True, eq=False)
class ColumnGrouping:
    """Partition of ``p`` variables into ``k`` labelled groups.

    ``assignment[j]`` is the group id of variable ``j``. Groups may be empty
    while an estimator is running; :attr:`empty_groups` reports them.
    """

    assignment: np.ndarray
    k: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-D vector")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise ValueError("assignment must contain integer group ids")
        a = a.astype(np.int64)
        k = int(self.k)
        if k < 1:
            raise ValueError("k must be at least 1")
        if a.min() < 0 or a.max() >= k:
            raise ValueError(f"group ids must lie in 0..{k - 1}")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "k", k)

    @classmethod
    def from_labels(cls, labels) -> "ColumnGrouping":
        """Relabel arbitrary hashable labels to 0..K-1 in order of first appearance."""
        mapping = {}
        out = []
        for lab in labels:
            if lab not in mapping:
                mapping[lab] = len(mapping)
            out.append(mapping[lab])
        return cls(np.array(out), len(mapping))

    @classmethod
    def from_groups(cls, groups, p=None) -> "ColumnGrouping":
        p = p if p is not None else sum(len(g) for g in groups)
        a = np.full(p, -1)
        for k, g in enumerate(groups):
            a[list(g)] = k
        if np.any(a < 0):
            raise ValueError("groups do not cover every variable")
        return cls(a, len(groups))

    @classmethod
    def from_indicator(cls, d: np.ndarray) -> "ColumnGrouping":
        d = np.asarray(d)
        if not np.all((d == 0) | (d == 1)) or not np.all(d.sum(axis=1) == 1):
            raise ValueError("indicator matrix must have exactly one 1 per row")
        return cls(d.argmax(axis=1), d.shape[1])

    @property
    def p(self) -> int:
        return self.assignment.size

    def indicator(self) -> np.ndarray:
        """The p x K binary matrix D."""
        d = np.zeros((self.p, self.k), dtype=int)
        d[np.arange(self.p), self.assignment] = 1
        return d

    def groups(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.assignment == k) for k in range(self.k)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    @property
    def empty_groups(self) -> List[int]:
        return [k for k, s in enumerate(self.sizes()) if s == 0]

    def same_group_mask(self) -> np.ndarray:
        return self.assignment[:, None] == self.assignment[None, :]

    def canonical(self) -> tuple:
        """Label-free representation: sorted tuple of sorted member tuples."""
        return tuple(sorted(tuple(g.tolist()) for g in self.groups() if g.size))

    def with_row(self, j: int, k: int) -> "ColumnGrouping":
        a = self.assignment.copy()
        a[j] = k
        return ColumnGrouping(a, self.k)

    def permuted(self, perm) -> "ColumnGrouping":
        """Grouping of the variables after reordering them by ``perm``."""
        return ColumnGrouping(self.assignment[np.asarray(perm)], self.k)

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": [int(v) for v in self.assignment]}

    @classmethod
    def from_dict(cls, obj: dict) -> "ColumnGrouping":
        return cls(np.asarray(obj["assignment"], dtype=np.int64), int(obj["k"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ColumnGrouping":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, ColumnGrouping):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash((self.k, self.assignment.tobytes()))

    def __repr__(self):
        return f"ColumnGrouping(k={self.k}, assignment={self.assignment.tolist()})"


@dataclass(frozen=True)
class BlockCovariance:
    grouping: ColumnGrouping
    blocks: List[np.ndarray]

    @property
    def p(self) -> int:
        return self.grouping.p

    def expanded(self) -> np.ndarray:
        out = np.zeros((self.p, self.p))
        for idx, block in zip(self.grouping.groups(), self.blocks):
            if idx.size:
                out[np.ix_(idx, idx)] = block
        return out

    def logdet(self) -> float:
        return float(sum(logdet_chol(safe_cholesky(b)) for b in self.blocks if b.size))


def _check_square(mat, p=None):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if p is not None and mat.shape[0] != p:
        raise ValueError(f"matrix is {mat.shape[0]}x{mat.shape[0]} but grouping covers {p} variables")
    return mat


def project_block_diagonal(cov, grouping: ColumnGrouping) -> BlockCovariance:
    """Zero every entry of ``cov`` linking variables from different groups."""
    cov = _check_square(cov, grouping.p)
    blocks = [cov[np.ix_(idx, idx)].copy() for idx in grouping.groups()]
    return BlockCovariance(grouping, blocks)


def block_loglik(sample_cov, grouping: ColumnGrouping) -> float:
    """Profile log-likelihood (per observation, constants dropped) of the
    block-diagonal covariance induced by ``grouping``.

    Evaluated block by block: the inverse of the projected matrix is block
    diagonal, so the trace term only touches the diagonal blocks of S.
    Empty groups contribute nothing.
    """
    s = _check_square(sample_cov, grouping.p)
    logdet = 0.0
    trace = 0.0
    for idx in grouping.groups():
        if idx.size == 0:
            continue
        block = s[np.ix_(idx, idx)]
        chol = safe_cholesky(block)
        logdet += logdet_chol(chol)
        trace += float(np.trace(scipy.linalg.cho_solve((chol, True), block, check_finite=False)))
    return -0.5 * logdet - 0.5 * trace
