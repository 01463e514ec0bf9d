"""Simulation designs and a replicated-experiment runner.

Every generator is a pure function of its arguments and an integer seed.
Random streams come from numpy's counter-based Philox bit generator keyed by
``SeedSequence`` entropy tuples, so replicate ``r`` of an experiment seeded
with ``s`` always sees the same numbers regardless of scheduling.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .blockstruct import ColumnGrouping, project_block_diagonal
from .core_stats import DataMatrix, compute_stats, safe_cholesky
from .estimators import canonical_method, estimate, select_k_silhouette
from .metrics import mape, partition_match
from .rng import make_rng

SCENARIOS = ("sigmaA", "sigmaB", "mape_pos", "mape_neg", "grid_cell", "scenario1", "scenario2")
GRID_CELLS = [(24, 3), (24, 6), (24, 12), (96, 4), (96, 8), (96, 16), (384, 8), (384, 16), (384, 32)]


def sample_mvn(mean, cov, n: int, seed=0) -> DataMatrix:
    """``n`` draws from N(mean, cov) as ``mean + z @ L.T``."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    mean = np.asarray(mean, dtype=float)
    chol = safe_cholesky(np.asarray(cov, dtype=float))
    z = rng.standard_normal((int(n), mean.size))
    return DataMatrix(mean + z @ chol.T)


def block_diag_with_grouping(blocks) -> tuple:
    sizes = [len(b) for b in blocks]
    p = sum(sizes)
    cov = np.zeros((p, p))
    start = 0
    for b in blocks:
        m = len(b)
        cov[start:start + m, start:start + m] = b
        start += m
    grouping = ColumnGrouping(np.repeat(np.arange(len(blocks)), sizes), len(blocks))
    return cov, grouping


def make_sigma_A():
    a12 = [[4.5, 2, 2], [2, 4.5, 2], [2, 2, 4.5]]
    a3 = [[4.5, 2], [2, 4.5]]
    return block_diag_with_grouping([np.array(a12), np.array(a12), np.array(a3)])


def make_sigma_B():
    b1 = [[4.5, -2, 1], [-2, 4.5, 2], [1, 2, 4.5]]
    b2 = [[4.5, -2, 2], [-2, 4.5, 2], [2, 2, 4.5]]
    b3 = [[3, 2], [2, 4.5]]
    return block_diag_with_grouping([np.array(b1), np.array(b2), np.array(b3)])


SIGMA_AB_MEAN = np.arange(8, dtype=float)


def make_mape_design(sign: str = "pos", p: int = 12, k: int = 3):
    """Equal blocks with diagonal 4.5 and within-block off-diagonal 2 (positive)
    or -1 (negative); mean (1, ..., p)."""
    if p % k:
        raise ValueError("k must divide p")
    off = {"pos": 2.0, "neg": -1.0}[sign]
    m = p // k
    block = np.full((m, m), off)
    np.fill_diagonal(block, 4.5)
    cov, grouping = block_diag_with_grouping([block] * k)
    return np.arange(1, p + 1, dtype=float), cov, grouping


@dataclass
class Component:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    grouping: ColumnGrouping


def make_scenario1() -> List[Component]:
    s11 = [[2.5, 0.5, 0.5], [0.5, 3.5, 0.5], [0.5, 0.5, 4.5]]
    s12 = [[2, 1, 1], [1, 2, 1], [1, 1, 2]]
    s13 = [[3.5, 3.0], [3.0, 3.9]]
    s21 = [[4.5, -2, 1], [-2, 4.5, 2], [1, 2, 4.5]]
    s22 = [[4, 3, 3], [3, 3.5, 3], [3, 3, 4]]
    s23 = [[4, 2], [2, 4]]
    s31 = [
        [2.1, 2, 2, 2, 2],
        [2, 2.5, 2, 2, 2],
        [2, 2, 3, 2, 2],
        [2, 2, 2, 5, 2],
        [2, 2, 2, 2, 4],
    ]
    s32 = [[2, 1, 1], [1, 3.5, 1], [1, 1, 2.5]]
    means = [np.arange(-5, 3, dtype=float), np.arange(0, 8, dtype=float), np.arange(5, 13, dtype=float)]
    block_sets = [[s11, s12, s13], [s21, s22, s23], [s31, s32]]
    comps = []
    for mu, blocks in zip(means, block_sets):
        cov, grouping = block_diag_with_grouping([np.array(b, dtype=float) for b in blocks])
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("scenario-1 covariance is not positive definite")
        comps.append(Component(1.0 / 3.0, mu, cov, grouping))
    return comps


def make_scenario2(seed: int) -> List[Component]:
    """Scenario-1 means with dense random Gram covariances A^T A, A ~ U(0, 1)."""
    rng = make_rng(seed, 2)
    comps = []
    for c in make_scenario1():
        a = rng.uniform(0.0, 1.0, size=(c.mean.size, c.mean.size))
        cov = a.T @ a
        comps.append(Component(c.weight, c.mean, cov, ColumnGrouping(np.zeros(c.mean.size, dtype=int), 1)))
    return comps


def sample_mixture(components: Sequence[Component], n_per_component: int, seed=0):
    """Fixed ``n_per_component`` rows per component, stacked in order.
    Returns ``(DataMatrix, true_labels)``."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    parts, labels = [], []
    for g, c in enumerate(components):
        parts.append(sample_mvn(c.mean, c.cov, n_per_component, rng).values)
        labels.append(np.full(n_per_component, g))
    return DataMatrix(np.vstack(parts)), np.concatenate(labels)


def make_random_block_cov(p: int, k: int, seed=0, noise_weight: float = 0.5, return_mean: bool = False):
    """Block-diagonal Gram blocks A^T A (A ~ U(1, 2)) plus dense noise
    ``noise_weight * E^T E`` (E ~ U(0, 1))."""
    if k < 1 or p % k:
        raise ValueError(f"k={k} must divide p={p}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    m = p // k
    blocks = []
    for _ in range(k):
        a = rng.uniform(1.0, 2.0, size=(m, m))
        blocks.append(a.T @ a)
    cov, grouping = block_diag_with_grouping(blocks)
    e = rng.uniform(0.0, 1.0, size=(p, p))
    cov = cov + noise_weight * (e.T @ e)
    mean = rng.uniform(0.0, 1.0, size=p)
    if return_mean:
        return cov, grouping, mean
    return cov, grouping


# --------------------------------------------------------------------------
# replicated experiments


@dataclass
class ScenarioSpec:
    name: str
    n_per_component: int = 100
    seed: int = 0
    p: Optional[int] = None
    k: Optional[int] = None
    noise_weight: float = 0.5
    unknown_k: bool = False

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")
        fixed = {"sigmaA": (8, 3), "sigmaB": (8, 3), "mape_pos": (12, 3), "mape_neg": (12, 3), "scenario1": (8, 3), "scenario2": (8, 3)}
        if self.name in fixed:
            p, k = fixed[self.name]
            if self.p not in (None, p):
                raise ValueError(f"scenario {self.name} has p={p}")
            self.p = p
            if self.k is None:
                self.k = k
        else:
            if self.p is None or self.k is None:
                raise ValueError("grid_cell needs p and k")
            if self.p % self.k:
                raise ValueError(f"k={self.k} must divide p={self.p}")
        if self.n_per_component < 1:
            raise ValueError("n_per_component must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioSpec":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReplicateRecord:
    replicate: int
    method: str
    success: bool
    wall_time: float
    assignment: Optional[List[int]] = None
    selected: Optional[int] = None
    mape: Optional[float] = None
    mape_mle: Optional[float] = None
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    records: List[ReplicateRecord] = field(default_factory=list)

    def methods(self) -> List[str]:
        return sorted({r.method for r in self.records})

    def aggregate(self) -> Dict[str, dict]:
        out = {}
        for m in self.methods():
            recs = [r for r in self.records if r.method == m]
            times = np.array([r.wall_time for r in recs])
            agg = {
                "replicates": len(recs),
                "successes": sum(r.success for r in recs),
                "accuracy": sum(r.success for r in recs) / len(recs),
                "failures": sum(r.error is not None for r in recs),
                "time_mean": float(times.mean()),
                "time_sd": float(times.std()),
                "time_median": float(np.median(times)),
            }
            mapes = [r.mape for r in recs if r.mape is not None]
            if mapes:
                agg["mape_mean"] = float(np.mean(mapes))
                agg["mape_mle_mean"] = float(np.mean([r.mape_mle for r in recs if r.mape_mle is not None]))
            sel = [r.selected for r in recs if r.selected is not None]
            if sel:
                agg["selected_mean"] = float(np.mean(sel))
                agg["selected_sd"] = float(np.std(sel))
            out[m] = agg
        return out

    def write_csv(self, path):
        fields = list(ReplicateRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.records:
                row = asdict(r)
                if row["assignment"] is not None:
                    row["assignment"] = " ".join(map(str, row["assignment"]))
                writer.writerow(row)

    def to_dict(self, timing=True) -> dict:
        agg = self.aggregate()
        if not timing:
            for a in agg.values():
                for key in ("time_mean", "time_sd", "time_median"):
                    a.pop(key, None)
        return {"schema": 1, "spec": self.spec.to_dict(), "aggregate": agg}

    def write_json(self, path, timing=True):
        with open(path, "w") as fh:
            json.dump(self.to_dict(timing), fh, indent=2, sort_keys=True)


def scenario_truth(spec: ScenarioSpec, replicate: int):
    """Mean, covariance and true grouping for one replicate of a
    single-population design."""
    if spec.name == "sigmaA":
        cov, g = make_sigma_A()
        return SIGMA_AB_MEAN, cov, g
    if spec.name == "sigmaB":
        cov, g = make_sigma_B()
        return SIGMA_AB_MEAN, cov, g
    if spec.name in ("mape_pos", "mape_neg"):
        mean, cov, g = make_mape_design(spec.name[5:], spec.p, spec.k)
        return mean, cov, g
    if spec.name == "grid_cell":
        cov, g, mean = make_random_block_cov(spec.p, spec.k, make_rng(spec.seed, replicate, 1), spec.noise_weight, True)
        return mean, cov, g
    raise ValueError(f"{spec.name} is a mixture design")


def _estimator_replicate(spec: ScenarioSpec, method: str, replicate: int, options: dict) -> ReplicateRecord:
    mean, cov, truth = scenario_truth(spec, replicate)
    data = sample_mvn(mean, cov, spec.n_per_component, make_rng(spec.seed, replicate, 0))
    t0 = time.perf_counter()
    try:
        S = compute_stats(data).cov
        k = spec.k
        selected = None
        if spec.unknown_k:
            k, _ = select_k_silhouette(S)
            selected = k
        report = estimate(S, k, method, **options.get(method, {}))
    except Exception as exc:  # noqa: BLE001 - replicate failures are data
        return ReplicateRecord(replicate, method, False, time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - t0
    rec = ReplicateRecord(
        replicate,
        method,
        partition_match(report.grouping, truth),
        elapsed,
        assignment=report.grouping.assignment.tolist(),
        selected=selected,
    )
    if spec.name in ("mape_pos", "mape_neg"):
        rec.mape = mape(cov, project_block_diagonal(S, report.grouping).expanded())
        rec.mape_mle = mape(cov, S)
    return rec


def _mixture_replicate(spec: ScenarioSpec, method: str, replicate: int, options: dict) -> ReplicateRecord:
    from .mixture import select_g

    if spec.name == "scenario1":
        comps = make_scenario1()
    else:
        comps = make_scenario2(int(make_rng(spec.seed, replicate, 2).integers(2**31)))
    data, _ = sample_mixture(comps, spec.n_per_component, make_rng(spec.seed, replicate, 0))
    opts = dict(options.get("select_g", {}))
    t0 = time.perf_counter()
    try:
        report, _ = select_g(data, k=spec.k, method=method, seed=spec.seed * 100003 + replicate, **opts)
    except Exception as exc:  # noqa: BLE001
        return ReplicateRecord(replicate, method, False, time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
    g_hat = report.model.g
    return ReplicateRecord(replicate, method, g_hat == len(comps), time.perf_counter() - t0, selected=g_hat)


def run_one(spec: ScenarioSpec, method: str, replicate: int, options: Optional[dict] = None) -> ReplicateRecord:
    method = canonical_method(method)
    options = options or {}
    if spec.name in ("scenario1", "scenario2"):
        return _mixture_replicate(spec, method, replicate, options)
    return _estimator_replicate(spec, method, replicate, options)


def _run_task(args):
    return run_one(*args)


def worker_count() -> int:
    env = os.environ.get("BDBC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_replicates(spec: ScenarioSpec, methods, replicates: int, options: Optional[dict] = None, workers: Optional[int] = None) -> ExperimentResult:
    """Run ``replicates`` independent draws of ``spec`` for each method.

    Replicate ``r`` uses streams keyed by ``(spec.seed, r)``, so all methods
    see the same data and results do not depend on ``workers``.
    """
    if isinstance(methods, str):
        methods = [methods]
    methods = [canonical_method(m) for m in methods]
    tasks = [(spec, m, r, options) for r in range(int(replicates)) for m in methods]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_run_task(t) for t in tasks]
    records.sort(key=lambda r: (r.replicate, r.method))
    return ExperimentResult(spec, records)
