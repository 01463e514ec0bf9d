"""Command-line driver.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
JSON results never contain timings; those go to a ``<output>.meta.json``
sidecar so reruns with the same seed are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass
from typing import List, Optional

from .blockstruct import project_block_diagonal
from .core_stats import DataMatrix, NumericalError, compute_stats, standardize
from .estimators import canonical_method, estimate, select_k_silhouette
from .ingest import Corpus, anova_select_k, heatmap_stat, load_csv, load_labels, tfidf_matrix, write_heatmap, write_matrix_csv
from .metrics import ari, mape, matched_accuracy
from .mixture import em_fit, select_g
from .simgen import SCENARIOS, ScenarioSpec, make_scenario1, make_scenario2, run_replicates, sample_mixture, sample_mvn, scenario_truth
from .rng import make_rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj, path: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump_meta(meta: dict, path: Optional[str]):
    if path:
        with open(path + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def _int_range(text: str) -> List[int]:
    """'1-5' or '1,2,4' -> list of ints."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty range {text!r}")
    return out


def _require_file(path, what):
    if path is None or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


@dataclass
class RunConfig:
    """Validated options shared by the estimation commands."""

    method: str = "hierarchical"
    k: Optional[int] = None
    k_auto: bool = False
    k_range: Optional[List[int]] = None
    gamma: float = 1.0
    lam: float = 1.0
    omega: float = 0.1
    convex_max_iter: int = 1000
    convex_tol: float = 1e-6

    def __post_init__(self):
        try:
            self.method = canonical_method(self.method)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if self.k is None and not self.k_auto:
            raise UsageError("give --k or --k-auto")
        if self.k is not None and self.k < 1:
            raise UsageError("--k must be positive")
        if self.omega <= 0:
            raise UsageError("--omega must be positive")
        if self.convex_max_iter < 1 or self.convex_tol <= 0:
            raise UsageError("--convex-max-iter and --convex-tol must be positive")

    def estimator_options(self) -> dict:
        if self.method == "convex":
            return dict(gamma=self.gamma, lam=self.lam, omega=self.omega, max_iter=self.convex_max_iter, tol=self.convex_tol)
        return {}


def _add_estimator_flags(p):
    p.add_argument("--method", default="hierarchical", help="greedy | convex | hier")
    p.add_argument("--k", type=int, help="number of column groups")
    p.add_argument("--k-auto", action="store_true", help="choose K by maximum silhouette")
    p.add_argument("--k-range", help="silhouette search range, e.g. 2-8")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--convex-max-iter", type=int, default=1000)
    p.add_argument("--convex-tol", type=float, default=1e-6)


def _add_input_flags(p, required=True):
    p.add_argument("--input", required=required, help="CSV file")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--label-column", help="name or 0-based index of a label column")
    p.add_argument("--standardize", action="store_true", help="scale columns to mean 0, variance 1")


def _run_config(args) -> RunConfig:
    k_range = None
    if args.k_range:
        try:
            k_range = _int_range(args.k_range)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return RunConfig(args.method, args.k, args.k_auto, k_range, args.gamma, args.lam, args.omega, args.convex_max_iter, args.convex_tol)


def _load(args):
    _require_file(args.input, "input CSV")
    try:
        data, labels = load_csv(args.input, not args.no_header, args.label_column)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.standardize:
        data = standardize(data)
    return data, labels


# --------------------------------------------------------------------------
# commands


def cmd_estimate_cov(args) -> int:
    cfg = _run_config(args)
    data, _ = _load(args)
    t0 = time.perf_counter()
    S = compute_stats(data).cov
    scores = None
    k = cfg.k
    if cfg.k_auto:
        lo, hi = (min(cfg.k_range), max(cfg.k_range)) if cfg.k_range else (None, None)
        k, scores = select_k_silhouette(S, lo, hi)
    if k > data.p:
        raise UsageError(f"--k {k} exceeds the number of columns {data.p}")
    report = estimate(S, k, cfg.method, **cfg.estimator_options())
    block = project_block_diagonal(S, report.grouping)
    out = {"schema": 1, **report.to_dict(timing=False), "columns": data.col_names, "covariance": block.expanded().tolist()}
    if scores is not None:
        out["k_scores"] = [[int(a), float(b)] for a, b in scores]
    _dump(out, args.output)
    _dump_meta({"wall_time": time.perf_counter() - t0}, args.output)
    if args.cov_out:
        write_matrix_csv(args.cov_out, block.expanded(), data.col_names)
    return 0


def _fit_common(args, data: DataMatrix, cfg: RunConfig):
    g_range = [args.g] if args.g is not None else _int_range(args.g_range or "1-5")
    k = cfg.k if cfg.k is not None else 1
    if k > data.p:
        raise UsageError(f"--k {k} exceeds the number of columns {data.p}")
    fit_options = dict(
        max_iter=args.max_iter,
        tol=args.tol,
        kmeans_restarts=args.restarts,
        k_auto=cfg.k_auto,
        estimator_options=cfg.estimator_options(),
    )
    if len(g_range) == 1:
        report = em_fit(data, g_range[0], k, cfg.method, seed=args.seed, **fit_options)
        table = None
    else:
        report, table = select_g(data, g_range, k, cfg.method, args.seed, args.starts, **fit_options)
    return report, table


def _validate_fit_args(args):
    if args.g is not None and args.g_range:
        raise UsageError("give either --g or --g-range, not both")
    if args.g is not None and args.g < 1:
        raise UsageError("--g must be positive")
    if args.g_range:
        try:
            rng = _int_range(args.g_range)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if min(rng) < 1:
            raise UsageError("--g-range entries must be positive")
    if args.max_iter < 1 or args.tol <= 0 or args.restarts < 1 or args.starts < 1:
        raise UsageError("--max-iter, --tol, --restarts and --starts must be positive")


def cmd_fit(args) -> int:
    _validate_fit_args(args)
    if args.anova_k is not None and not args.label_column:
        raise UsageError("--anova-k needs --label-column")
    cfg = _run_config(args)
    data, labels = _load(args)
    if args.anova_k is not None:
        data = anova_select_k(data, labels, args.anova_k)
    report, table = _fit_common(args, data, cfg)
    out = report.to_dict(timing=False)
    out["columns"] = data.col_names
    if table is not None:
        out["selection"] = [row.__dict__ for row in table]
    if labels is not None:
        out["evaluation"] = {"ari": ari(labels, report.row_assignment), "accuracy": matched_accuracy(labels, report.row_assignment)}
    _dump(out, args.output)
    _dump_meta({"wall_time": report.wall_time}, args.output)
    if args.responsibilities:
        write_matrix_csv(args.responsibilities, report.responsibilities, [f"component_{g}" for g in range(report.model.g)])
    return 0


def _simulate_plan(args):
    if args.config:
        _require_file(args.config, "config file")
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        allowed = {"scenario", "methods", "replicates", "options"}
        unknown = set(cfg) - allowed
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            spec = ScenarioSpec.from_dict(cfg["scenario"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad scenario in config: {exc}") from None
        methods = cfg.get("methods", ["hierarchical"])
        reps = int(cfg.get("replicates", 1))
        options = cfg.get("options", {})
    else:
        if not args.scenario:
            raise UsageError("give --scenario or --config")
        try:
            spec = ScenarioSpec(args.scenario, args.n, args.seed, args.p, args.k, unknown_k=args.unknown_k)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        methods = args.method.split(",")
        reps = args.reps
        options = {}
    try:
        methods = [canonical_method(m) for m in methods]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if reps < 0:
        raise UsageError("--reps must be nonnegative")
    return spec, methods, reps, options


def _write_dataset(spec: ScenarioSpec, path: str):
    if spec.name in ("scenario1", "scenario2"):
        comps = make_scenario1() if spec.name == "scenario1" else make_scenario2(int(make_rng(spec.seed, 0, 2).integers(2**31)))
        data, labels = sample_mixture(comps, spec.n_per_component, make_rng(spec.seed, 0, 0))
    else:
        mean, cov, _ = scenario_truth(spec, 0)
        data = sample_mvn(mean, cov, spec.n_per_component, make_rng(spec.seed, 0, 0))
        labels = None
    header = [f"x{j + 1}" for j in range(data.p)] + (["label"] if labels is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(data.values):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            writer.writerow(cells)


def cmd_simulate(args) -> int:
    spec, methods, reps, options = _simulate_plan(args)
    if args.write_data:
        _write_dataset(spec, args.write_data)
    t0 = time.perf_counter()
    result = run_replicates(spec, methods, reps, options)
    out = result.to_dict(timing=False)
    out["methods"] = methods
    out["replicates"] = reps
    _dump(out, args.out_json)
    _dump_meta({"wall_time": time.perf_counter() - t0, "aggregate": result.aggregate()}, args.out_json)
    if args.out_csv:
        result.write_csv(args.out_csv)
    return 0


def cmd_evaluate(args) -> int:
    pairs = [(args.truth, args.pred), (args.truth_cov, args.est_cov)]
    if all(a is None and b is None for a, b in pairs):
        raise UsageError("give --truth/--pred and/or --truth-cov/--est-cov")
    for a, b in pairs:
        if (a is None) != (b is None):
            raise UsageError("label and covariance inputs come in pairs")
    out = {"schema": 1}
    if args.truth:
        _require_file(args.truth, "truth labels")
        _require_file(args.pred, "predicted labels")
        truth, pred = load_labels(args.truth), load_labels(args.pred)
        if len(truth) != len(pred):
            raise UsageError(f"label files differ in length ({len(truth)} vs {len(pred)})")
        out["ari"] = ari(truth, pred)
        out["accuracy"] = matched_accuracy(truth, pred)
    if args.truth_cov:
        _require_file(args.truth_cov, "true covariance")
        _require_file(args.est_cov, "estimated covariance")
        try:
            t, _ = load_csv(args.truth_cov, has_header=not args.no_header)
            e, _ = load_csv(args.est_cov, has_header=not args.no_header)
            out["mape"] = mape(t.values, e.values)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _dump(out, args.output)
    return 0


def cmd_topics(args) -> int:
    _validate_fit_args(args)
    if args.top_tf < 1 or (args.select_k is not None and args.select_k < 1):
        raise UsageError("--top-tf and --select-k must be positive")
    cfg = _run_config(args)
    _require_file(args.input, "corpus CSV")
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or args.text_column not in reader.fieldnames:
            raise UsageError(f"no text column {args.text_column!r}")
        if args.rating_column and args.rating_column not in reader.fieldnames:
            raise UsageError(f"no rating column {args.rating_column!r}")
        rows = list(reader)
    texts = [r[args.text_column] for r in rows]
    ratings = None
    if args.rating_column:
        try:
            ratings = [float(r[args.rating_column]) for r in rows]
        except ValueError as exc:
            raise UsageError(f"non-numeric rating: {exc}") from None
    if args.select_k is not None and ratings is None:
        raise UsageError("--select-k needs --rating-column")
    try:
        corpus = Corpus.from_texts(texts, ratings)
        select = None if args.select_k is None else (args.select_k, corpus.ratings)
        tfidf = tfidf_matrix(corpus, args.top_tf, select)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report, table = _fit_common(args, tfidf, cfg)
    cells, notes = heatmap_stat(tfidf, report.row_assignment, report.model.groupings)
    os.makedirs(args.out_dir, exist_ok=True)
    fit = report.to_dict(timing=False)
    fit["columns"] = tfidf.col_names
    fit["documents"] = corpus.doc_ids
    if table is not None:
        fit["selection"] = [row.__dict__ for row in table]
    _dump(fit, os.path.join(args.out_dir, "fit.json"))
    write_matrix_csv(os.path.join(args.out_dir, "tfidf.csv"), tfidf.values, tfidf.col_names)
    write_heatmap(cells, notes, os.path.join(args.out_dir, "heatmap.csv"), os.path.join(args.out_dir, "heatmap.json"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdbc", description="Gaussian bi-clustering with block-diagonal covariances")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate-cov", help="column grouping and block-diagonal covariance of a CSV")
    _add_input_flags(p)
    _add_estimator_flags(p)
    p.add_argument("--output", help="JSON path (default stdout)")
    p.add_argument("--cov-out", help="CSV path for the projected covariance")
    p.set_defaults(func=cmd_estimate_cov)

    def fit_flags(q):
        q.add_argument("--g", type=int, help="number of row clusters")
        q.add_argument("--g-range", help="BIC search range, e.g. 1-5 (default)")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--max-iter", type=int, default=1000, help="EM iterations")
        q.add_argument("--tol", type=float, default=1e-4, help="Aitken tolerance")
        q.add_argument("--restarts", type=int, default=10, help="k-means restarts")
        q.add_argument("--starts", type=int, default=1, help="EM starts per G")

    p = sub.add_parser("fit", help="bi-cluster fit of a CSV")
    _add_input_flags(p)
    _add_estimator_flags(p)
    fit_flags(p)
    p.add_argument("--anova-k", type=int, help="keep the K columns with highest ANOVA F against --label-column")
    p.add_argument("--output", help="JSON path (default stdout)")
    p.add_argument("--responsibilities", help="CSV path for the N x G responsibilities")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="replicated simulation experiments")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--n", type=int, default=100, help="observations (per component for mixtures)")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--method", default="hierarchical", help="comma-separated estimators")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--unknown-k", action="store_true", help="select K by silhouette")
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--write-data", help="write replicate 0's dataset to this CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="ARI / accuracy / MAPE")
    p.add_argument("--truth")
    p.add_argument("--pred")
    p.add_argument("--truth-cov")
    p.add_argument("--est-cov")
    p.add_argument("--no-header", action="store_true", help="covariance CSVs have no header")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("topics", help="TF-IDF bi-clustering of a review corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--text-column", default="text")
    p.add_argument("--rating-column")
    p.add_argument("--top-tf", type=int, default=1000)
    p.add_argument("--select-k", type=int)
    p.add_argument("--out-dir", required=True)
    _add_estimator_flags(p)
    fit_flags(p)
    p.set_defaults(func=cmd_topics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"bdbc: error: {exc}\n")
        return 1
    except NumericalError as exc:
        sys.stderr.write(f"bdbc: numerical failure: {exc}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"bdbc: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
