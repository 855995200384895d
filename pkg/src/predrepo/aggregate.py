"""Cross-method aggregation: normalized error, fractional ranks, win rates,
and rescaled loss.

All functions compare methods over an identical task set (a missing cell is
an error, not a skip). Normalized error rescales each task's losses between
the best method (0) and the median method (1), with the denominator floored
at 1e-5 and scores clipped to [0, 1] per task before any averaging. Win rates
and rescaled losses aggregate fold losses to dataset means first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

DENOM_FLOOR = 1e-5

TaskKey = tuple[str, int]


@dataclass
class MethodResults:
    """Per-task test losses (and optional times) for one method."""

    method: str
    losses: dict[TaskKey, float]
    time_fit: dict[TaskKey, float] | None = None
    time_infer: dict[TaskKey, float] | None = None


def _check_unique_names(methods: list[MethodResults]) -> None:
    names = [m.method for m in methods]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate method names: {names}")


def _common_tasks(methods: list[MethodResults]) -> list[TaskKey]:
    if not methods:
        raise ValueError("no methods given")
    tasks = sorted(methods[0].losses)
    universe = set(tasks)
    for m in methods:
        missing = universe.symmetric_difference(m.losses)
        if missing:
            raise ValueError(
                f"method {m.method!r} does not cover the same tasks; "
                f"mismatched cells: {sorted(missing)[:5]}"
            )
    return tasks


def _loss_table(methods: list[MethodResults]) -> tuple[list[TaskKey], np.ndarray]:
    tasks = _common_tasks(methods)
    table = np.array([[m.losses[t] for t in tasks] for m in methods], dtype=np.float64)
    return tasks, table


def lower_median(values: np.ndarray) -> float:
    """Element at index ceil(k/2)-1 of the sorted values (an achieved loss)."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    k = s.size
    return float(s[(k + 1) // 2 - 1])


def normalized_error(methods: list[MethodResults]) -> dict[tuple[str, TaskKey], float]:
    """Per (method, task) score in [0, 1]: 0 at the best loss, 1 at the median."""
    if len(methods) < 2:
        raise ValueError("normalized error needs at least 2 methods")
    _check_unique_names(methods)
    tasks, table = _loss_table(methods)
    out: dict[tuple[str, TaskKey], float] = {}
    for col, task in enumerate(tasks):
        losses = table[:, col]
        topline = float(losses.min())
        baseline = lower_median(losses)
        denom = max(baseline - topline, DENOM_FLOOR)
        for row, m in enumerate(methods):
            score = (losses[row] - topline) / denom
            out[(m.method, task)] = float(min(max(score, 0.0), 1.0))
    return out


def mean_normalized_error(methods: list[MethodResults]) -> dict[str, float]:
    scores = normalized_error(methods)
    tasks = _common_tasks(methods)
    return {
        m.method: float(np.mean([scores[(m.method, t)] for t in tasks]))
        for m in methods
    }


def average_rank(methods: list[MethodResults]) -> dict[str, float]:
    """Mean fractional rank per method (best loss = rank 1, ties averaged)."""
    if len(methods) < 2:
        raise ValueError("ranking needs at least 2 methods")
    _check_unique_names(methods)
    _, table = _loss_table(methods)
    ranks = np.apply_along_axis(lambda c: rankdata(c, method="average"), 0, table)
    means = ranks.mean(axis=1)
    return {m.method: float(means[i]) for i, m in enumerate(methods)}


def _dataset_means(method: MethodResults, fold_count: int | None) -> dict[str, float]:
    by_dataset: dict[str, list[float]] = {}
    for (dataset, _fold), loss in sorted(method.losses.items()):
        by_dataset.setdefault(dataset, []).append(loss)
    if fold_count is None:
        counts = {len(v) for v in by_dataset.values()}
        if len(counts) != 1:
            raise ValueError(f"method {method.method!r} has uneven fold counts per dataset")
    else:
        for dataset, losses in by_dataset.items():
            if len(losses) != fold_count:
                raise ValueError(
                    f"method {method.method!r} has {len(losses)} folds for dataset "
                    f"{dataset!r}, expected {fold_count}"
                )
    return {d: float(np.mean(v)) for d, v in by_dataset.items()}


class WinRate(NamedTuple):
    winrate: float
    n_better: int
    n_worse: int
    n_equal: int


def winrate(method_a: MethodResults, method_b: MethodResults,
            fold_count: int | None) -> WinRate:
    """Per-dataset win rate of ``method_a`` against ``method_b``.

    Fold losses are averaged per dataset first; a dataset counts as a win when
    a's mean loss is strictly lower, and ties (exact float equality) count one
    half. winrate(a, b) + winrate(b, a) = 1 exactly.
    """
    _common_tasks([method_a, method_b])
    means_a = _dataset_means(method_a, fold_count)
    means_b = _dataset_means(method_b, fold_count)
    n_better = n_worse = n_equal = 0
    for dataset in means_a:
        la, lb = means_a[dataset], means_b[dataset]
        if la < lb:
            n_better += 1
        elif la > lb:
            n_worse += 1
        else:
            n_equal += 1
    total = n_better + n_worse + n_equal
    return WinRate((n_better + 0.5 * n_equal) / total, n_better, n_worse, n_equal)


def rescaled_loss(methods: list[MethodResults], fold_count: int | None = None) -> dict[str, float]:
    """Min-max rescaled loss per dataset (best method 0, worst 1), averaged."""
    if len(methods) < 2:
        raise ValueError("rescaled loss needs at least 2 methods")
    _check_unique_names(methods)
    _common_tasks(methods)
    means = [_dataset_means(m, fold_count) for m in methods]
    datasets = sorted(means[0])
    totals = np.zeros(len(methods))
    for dataset in datasets:
        losses = np.array([mm[dataset] for mm in means])
        lo, hi = losses.min(), losses.max()
        if hi > lo:
            totals += (losses - lo) / (hi - lo)
    return {m.method: float(totals[i] / len(datasets)) for i, m in enumerate(methods)}
