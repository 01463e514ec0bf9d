"""CSV loading, ANOVA feature selection, TF-IDF construction and the
cluster-by-term-group heatmap statistic."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .blockstruct import ColumnGrouping
from .core_stats import DataMatrix, as_array

TOKEN_RE = re.compile(r"[^\W_]+")


def _parse_float(text: str, row: int, col: int) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ValueError(f"non-numeric cell {text!r} at ({row}, {col})") from None
    if not np.isfinite(val):
        raise ValueError(f"non-finite cell {text!r} at ({row}, {col})")
    return val


def load_csv(path, has_header: bool = True, label_column: Union[str, int, None] = None):
    """Read a numeric CSV into a :class:`DataMatrix`.

    ``label_column`` (header name or 0-based index) is split off as a list of
    strings. Cell coordinates in error messages are 1-based (data row, column)
    counted in the file, header excluded.
    Returns ``(DataMatrix, labels or None)``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if has_header:
        if not rows:
            raise ValueError(f"{path}: empty file")
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    else:
        header = None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0]) if header is None else len(header)
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ValueError(f"{path}: row {i} has {len(r)} cells, expected {width}")
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise ValueError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise ValueError(f"{path}: label column {label_idx} out of range")
    keep = [j for j in range(width) if j != label_idx]
    values = np.array([[_parse_float(r[j].strip(), i, j + 1) for j in keep] for i, r in enumerate(rows, start=1)])
    labels = None if label_idx is None else [r[label_idx].strip() for r in rows]
    names = [header[j] for j in keep] if header is not None else None
    return DataMatrix(values, col_names=names), labels


def write_matrix_csv(path, values, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in np.atleast_2d(values):
            writer.writerow([repr(float(v)) for v in row])


def load_labels(path) -> List[str]:
    """One label per line, or the first column of a CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [r[0].strip() for r in csv.reader(fh) if r and r[0].strip()]


# --------------------------------------------------------------------------
# ANOVA


def anova_f(data, labels) -> np.ndarray:
    """One-way ANOVA F statistic per column.

    Columns with zero within-group variance but nonzero between-group
    variance get +inf; columns constant overall get 0.
    """
    x = as_array(data)
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise ValueError("one label per row required")
    classes, inv = np.unique(labels, return_inverse=True)
    c = classes.size
    n = x.shape[0]
    if c < 2:
        raise ValueError("ANOVA needs at least two classes")
    if n - c < 1:
        raise ValueError("ANOVA needs more rows than classes")
    counts = np.bincount(inv, minlength=c).astype(float)
    sums = np.zeros((c, x.shape[1]))
    np.add.at(sums, inv, x)
    means = sums / counts[:, None]
    grand = x.mean(axis=0)
    ssb = np.sum(counts[:, None] * (means - grand) ** 2, axis=0)
    ssw = np.sum((x - means[inv]) ** 2, axis=0)
    msb = ssb / (c - 1)
    msw = ssw / (n - c)
    scale = np.maximum(np.abs(x).max(axis=0), 1.0) ** 2
    tiny = 1e-24 * scale
    f = np.zeros(x.shape[1])
    regular = msw > tiny
    f[regular] = msb[regular] / msw[regular]
    f[~regular & (msb > tiny)] = np.inf
    return f


def anova_select_k(data: DataMatrix, labels, k: int) -> DataMatrix:
    """Keep the ``k`` columns with the largest F statistic, in original
    column order; ties favour lower column indices."""
    if not isinstance(data, DataMatrix):
        data = DataMatrix(data)
    if not 1 <= k <= data.p:
        raise ValueError(f"k must lie in 1..{data.p}")
    f = anova_f(data, labels)
    order = np.lexsort((np.arange(f.size), -f))
    return data.select_columns(sorted(order[:k].tolist()))


# --------------------------------------------------------------------------
# text


def tokenize(text: str) -> List[str]:
    return [t for t in TOKEN_RE.findall(text.lower()) if len(t) >= 2]


@dataclass
class Corpus:
    documents: List[List[int]]
    vocabulary: List[str]
    ratings: Optional[np.ndarray] = None
    doc_ids: List[int] = field(default_factory=list)

    @classmethod
    def from_texts(cls, texts: Sequence[str], ratings=None) -> "Corpus":
        """Tokenize ``texts``; documents left empty are dropped (``doc_ids``
        keeps the original positions)."""
        tokenized, ids = [], []
        for i, t in enumerate(texts):
            toks = tokenize(t)
            if toks:
                tokenized.append(toks)
                ids.append(i)
        if not tokenized:
            raise ValueError("no document has any token after filtering")
        vocab = sorted({t for doc in tokenized for t in doc})
        index = {t: j for j, t in enumerate(vocab)}
        docs = [[index[t] for t in doc] for doc in tokenized]
        r = None if ratings is None else np.asarray(ratings, dtype=float)[ids]
        return cls(docs, vocab, r, ids)


def term_frequencies(corpus: Corpus) -> np.ndarray:
    tf = np.zeros((len(corpus.documents), len(corpus.vocabulary)))
    for i, doc in enumerate(corpus.documents):
        np.add.at(tf[i], doc, 1.0)
        tf[i] /= len(doc)
    return tf


def tfidf_matrix(corpus: Corpus, top_tf: int, select_k=None) -> DataMatrix:
    """Document-term TF-IDF matrix (relative term frequency times natural-log
    inverse document frequency).

    Terms are first cut to the ``top_tf`` with the highest mean term
    frequency; ``select_k=(k, ratings)`` then keeps the ``k`` terms with the
    largest ANOVA F against the ratings.
    """
    if not corpus.documents:
        raise ValueError("empty corpus")
    tf = term_frequencies(corpus)
    n = tf.shape[0]
    df = np.count_nonzero(tf, axis=0)
    idf = np.log(n / df)
    scores = tf * idf
    mean_tf = tf.mean(axis=0)
    order = np.lexsort((np.arange(mean_tf.size), -mean_tf))
    keep = sorted(order[: max(0, int(top_tf))].tolist())
    if not keep:
        raise ValueError("vocabulary is empty after filtering")
    out = DataMatrix(scores[:, keep], [str(i) for i in corpus.doc_ids] or None, [corpus.vocabulary[j] for j in keep])
    if select_k is not None:
        k, ratings = select_k
        out = anova_select_k(out, ratings, min(int(k), out.p))
    return out


# --------------------------------------------------------------------------
# heatmap


@dataclass
class HeatmapCell:
    row_cluster: int
    column_group: int
    percent: float
    n_rows: int
    terms: List[str]


def heatmap_stat(tfidf: DataMatrix, row_assignment, groupings: Sequence[ColumnGrouping]):
    """Relative importance of each column group within each row cluster.

    For row cluster B and column group A of B's grouping: the mean score of
    A's columns over B's rows, divided by the mean over row clusters of the
    same quantity, times 100. Returns ``(cells, notes)``; groups that are
    empty or have a zero denominator are omitted and noted.
    """
    x = as_array(tfidf)
    rows = np.asarray(row_assignment)
    names = tfidf.col_names if isinstance(tfidf, DataMatrix) and tfidf.col_names else [str(j) for j in range(x.shape[1])]
    clusters = [c for c in range(len(groupings)) if np.any(rows == c)]
    cells, notes = [], []
    for b in clusters:
        grouping = groupings[b]
        for a, cols in enumerate(grouping.groups()):
            if cols.size == 0:
                notes.append(f"row cluster {b}: column group {a} is empty")
                continue
            per_cluster = [x[np.ix_(rows == c, cols)].mean() for c in clusters]
            denom = float(np.mean(per_cluster))
            if denom == 0:
                notes.append(f"row cluster {b}: column group {a} has zero average score")
                continue
            num = per_cluster[clusters.index(b)]
            cells.append(HeatmapCell(b, a, float(100.0 * num / denom), int(np.sum(rows == b)), [names[j] for j in cols]))
    return cells, notes


def write_heatmap(cells, notes, csv_path=None, json_path=None):
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_cluster", "column_group", "percent", "n_rows", "terms"])
            for c in cells:
                writer.writerow([c.row_cluster, c.column_group, repr(c.percent), c.n_rows, " ".join(c.terms)])
    if json_path:
        payload = {"schema": 1, "cells": [c.__dict__ for c in cells], "notes": list(notes)}
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
