"""Zeroshot portfolio learning from stored validation losses.

A portfolio is an ordered list of configs picked greedily: each step appends
the candidate that minimizes the mean, over training tasks, of the minimum
validation loss across the selected set. Two aggregation modes exist: raw
stored losses, and per-task min-max normalization over the candidate pool
(the default, which keeps heterogeneous metrics comparable across tasks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import Repository, TaskMeta

RAW_LOSS = "raw_loss"
NORMALIZED_LOSS = "normalized_loss"
AGGREGATIONS = (RAW_LOSS, NORMALIZED_LOSS)

DEFAULT_SIZE = 200


@dataclass
class Portfolio:
    """Ordered config ordinals with the training objective after each pick."""

    configs: list[int]
    objective_trajectory: list[float]
    aggregation: str


def normalize_losses(loss_matrix: np.ndarray) -> np.ndarray:
    """Min-max rescale each row (task) across candidates; constant rows map to 0."""
    lo = loss_matrix.min(axis=1, keepdims=True)
    hi = loss_matrix.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.zeros_like(loss_matrix)
    np.divide(loss_matrix - lo, span, out=out, where=span > 0)
    return out


def _loss_matrix(repo: Repository, task_ids: list[int], ordinals: list[int],
                 aggregation: str) -> np.ndarray:
    table = np.asarray(repo.eval_table[:, :, 0], dtype=np.float64)
    mat = table[np.ix_(task_ids, ordinals)]
    if aggregation == NORMALIZED_LOSS:
        return normalize_losses(mat)
    return mat


def learn_portfolio(train_tasks, candidates, n_max: int, aggregation: str,
                    repo: Repository) -> Portfolio:
    """Greedy portfolio over ``candidates`` evaluated on ``train_tasks``.

    Ties go to the lowest config ordinal; a config is never picked twice
    (re-picking cannot improve a min-based objective). Stops after ``n_max``
    picks or when candidates are exhausted.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    task_ids = sorted({repo.task_index(t) for t in train_tasks})
    if not task_ids:
        raise ValueError("train task list is empty")
    ordinals = sorted({repo.config_index(c) for c in candidates})
    if not ordinals:
        raise ValueError("candidate list is empty")

    losses = _loss_matrix(repo, task_ids, ordinals, aggregation)  # (tasks, candidates)
    current = np.full(len(task_ids), np.inf)
    remaining = list(range(len(ordinals)))
    picked: list[int] = []
    trajectory: list[float] = []
    for _ in range(min(n_max, len(ordinals))):
        best_col = -1
        best_obj = np.inf
        for col in remaining:
            obj = float(np.mean(np.minimum(current, losses[:, col])))
            if obj < best_obj:
                best_obj = obj
                best_col = col
        picked.append(ordinals[best_col])
        current = np.minimum(current, losses[:, best_col])
        trajectory.append(best_obj)
        remaining.remove(best_col)
    return Portfolio(configs=picked, objective_trajectory=trajectory, aggregation=aggregation)


def loo_train_tasks(repo: Repository, held_out_dataset: str) -> list[TaskMeta]:
    """All tasks whose dataset differs from ``held_out_dataset`` (leakage guard)."""
    if held_out_dataset not in repo.datasets:
        raise KeyError(f"unknown dataset: {held_out_dataset!r}")
    return [t for t in repo.tasks if t.dataset_id != held_out_dataset]
