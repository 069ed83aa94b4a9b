"""Clustering metrics, lowest-loss model selection, bootstrap uncertainty, Z-scores."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation, DimensionError

DEFAULT_RUNS = 5
DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class RunRecord:
    seed: int
    final_loss: float
    acc: float
    nmi: float
    model: str = ""
    dataset: str = ""

    def __post_init__(self):
        if not math.isfinite(self.final_loss):
            raise ContractViolation(f"run {self.seed}: final loss is not finite")
        for name in ("acc", "nmi"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractViolation(f"run {self.seed}: {name}={value} outside [0, 1]")

    def to_json(self) -> dict:
        d = asdict(self)
        return {key: d[key] for key in ("model", "dataset", "seed", "final_loss", "acc", "nmi")}

    @classmethod
    def from_json(cls, row: Mapping) -> "RunRecord":
        return cls(int(row["seed"]), float(row["final_loss"]), float(row["acc"]), float(row["nmi"]),
                   str(row.get("model", "")), str(row.get("dataset", "")))


@dataclass(frozen=True)
class BootstrapEstimate:
    selected_metric: float
    std_hat: float
    B: int


# -- assignment -------------------------------------------------------------------


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect assignment ``perm[row] = col``.

    Among optimal assignments the lexicographically smallest permutation is
    returned: rows are fixed in order to the smallest column that still
    admits an optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"assignment needs a square matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractViolation("assignment cost must be finite")
    k = cost.shape[0]
    if k == 0:
        return np.zeros(0, dtype=np.int64)

    def solve(sub: np.ndarray) -> float:
        r, c = linear_sum_assignment(sub)
        return float(sub[r, c].sum())

    optimum = solve(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()) * k)
    perm = np.empty(k, dtype=np.int64)
    rows = list(range(k))
    cols = list(range(k))
    fixed = 0.0
    for row in range(k):
        rows.remove(row)
        for col in sorted(cols):
            rest = [c for c in cols if c != col]
            tail = solve(cost[np.ix_(rows, rest)]) if rows else 0.0
            if fixed + cost[row, col] + tail <= optimum + tol:
                perm[row] = col
                fixed += cost[row, col]
                cols.remove(col)
                break
        else:  # pragma: no cover - the optimum is always attainable
            raise RuntimeError("no optimal completion found")
    return perm


def _check_labels(labels, k: int, what: str) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DimensionError(f"{what} must be one-dimensional")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= k):
        raise ContractViolation(f"{what} must be integers in [0, {k})")
    return arr.astype(np.int64)


def contingency(pred, truth, k: int) -> np.ndarray:
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (pred, truth), 1)
    return table


def accuracy(pred, truth, k: int | None = None) -> float:
    """Best agreement over bijective relabelings of the predicted clusters."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"pred has shape {pred.shape}, truth {truth.shape}")
    if k is None:
        k = int(max(pred.max(initial=0), truth.max(initial=0))) + 1
    pred = _check_labels(pred, k, "pred")
    truth = _check_labels(truth, k, "truth")
    if pred.size == 0:
        raise ContractViolation("accuracy of an empty labelling")
    table = contingency(pred, truth, k)
    perm = hungarian(-table)
    return float(table[np.arange(k), perm].sum()) / pred.size


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two label entropies."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError(f"label arrays differ in shape: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ContractViolation("NMI of an empty labelling")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1.0)
    h_pred = _entropy(table.sum(axis=1))
    h_truth = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    n = table.sum()
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(min(max(mi / (0.5 * (h_pred + h_truth)), 0.0), 1.0))


# -- model selection --------------------------------------------------------------


def _selection_rank(runs: Sequence[RunRecord]) -> np.ndarray:
    order = sorted(range(len(runs)), key=lambda i: (runs[i].final_loss, runs[i].seed))
    rank = np.empty(len(runs), dtype=np.int64)
    rank[order] = np.arange(len(runs))
    return rank


def select_best_run(runs: Sequence[RunRecord]) -> RunRecord:
    """Run with the lowest final loss (lowest seed on ties)."""
    runs = list(runs)
    if not runs:
        raise ContractViolation("cannot select from zero runs")
    return min(runs, key=lambda r: (r.final_loss, r.seed))


def bootstrap_std(runs: Sequence[RunRecord], B: int = DEFAULT_BOOTSTRAP, seed: int = 0,
                  metrics: Iterable[str] = ("acc", "nmi")) -> dict[str, BootstrapEstimate]:
    """Bootstrap spread of the lowest-loss-selected metric.

    Each of ``B`` resamples draws ``R`` runs with replacement and keeps the
    metric of its lowest-loss member; ``std_hat`` is the ``B - 1``
    denominator standard deviation of those ``B`` values.
    """
    runs = list(runs)
    if not runs:
        raise ContractViolation("bootstrap needs at least one run")
    if B < 2:
        raise ContractViolation("bootstrap needs B >= 2")
    rank = _selection_rank(runs)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(runs), size=(B, len(runs)))
    chosen = idx[np.arange(B), np.argmin(rank[idx], axis=1)]
    best = select_best_run(runs)
    out = {}
    for metric in metrics:
        values = np.array([getattr(r, metric) for r in runs], dtype=np.float64)[chosen]
        std = 0.0 if np.all(values == values[0]) else float(np.std(values, ddof=1))
        out[metric] = BootstrapEstimate(float(getattr(best, metric)), std, B)
    return out


# -- Z-score aggregation -------------------------------------------------------------


def zscores(results: Mapping[str, Mapping[str, Mapping[str, float]]]) -> dict[str, dict[tuple[str, str], float]]:
    """Per (dataset, metric) cell, standardize scores across models (population std).

    ``results[model][dataset][metric]``; returns ``{model: {(dataset, metric): z}}``.
    A zero-spread cell yields Z = 0 for every model (with a warning).
    """
    models = list(results)
    cells: dict[tuple[str, str], dict[str, float]] = {}
    for model in models:
        for dataset, metrics in results[model].items():
            for metric, value in metrics.items():
                cells.setdefault((dataset, metric), {})[model] = float(value)
    out: dict[str, dict[tuple[str, str], float]] = {m: {} for m in models}
    for cell, scores in sorted(cells.items()):
        if len(scores) < 2:
            raise ContractViolation(f"Z-scores need at least two models in cell {cell}")
        values = np.array(list(scores.values()))
        mu = values.mean()
        sd = float(np.sqrt(((values - mu) ** 2).mean()))
        if sd == 0.0:
            warnings.warn(f"zero spread in cell {cell}; Z set to 0", RuntimeWarning, stacklevel=2)
        for model, value in scores.items():
            out[model][cell] = 0.0 if sd == 0.0 else float((value - mu) / sd)
    return out


def zscore_table(results, groups: Mapping[str, Sequence[str]] | None = None,
                 metrics: Sequence[str] | None = None) -> dict[str, dict[str, float]]:
    """Mean Z per model and dataset group.

    ``groups`` maps group name to datasets (default: one group ``"all"``);
    ``metrics`` restricts which metrics enter the average (default: all).
    """
    z = zscores(results)
    if groups is None:
        datasets = sorted({d for per_model in z.values() for d, _ in per_model})
        groups = {"all": datasets}
    table: dict[str, dict[str, float]] = {}
    for model, cells in z.items():
        row = {}
        for group, datasets in groups.items():
            vals = [v for (d, m), v in cells.items() if d in datasets and (metrics is None or m in metrics)]
            row[group] = float(np.mean(vals)) if vals else float("nan")
        table[model] = row
    return table
