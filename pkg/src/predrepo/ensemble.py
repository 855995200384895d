"""Greedy ensemble selection over stored predictions.

Selection is with replacement: each step adds the candidate whose inclusion
minimizes the validation loss of the running average, ties going to the
lowest config ordinal. The full trajectory is recorded for every step; the
returned weights come from the best prefix, which makes the ensemble's
validation loss never worse than the best single candidate's.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from .store import TEST, VAL, Repository

DEFAULT_STEPS = 40


@dataclass
class EnsembleWeights:
    """Selection counts per config ordinal, normalized by total steps taken.

    ``trajectory`` holds one (chosen ordinal, validation loss after the step)
    pair for every step of the full run, even when the returned weights come
    from an earlier prefix.
    """

    counts: dict[int, int]
    steps: int
    trajectory: list[tuple[int, float]]

    @property
    def val_loss(self) -> float:
        """Validation loss of the returned (best-prefix) weights."""
        return self.trajectory[self.steps - 1][1]

    def weight(self, config: int) -> float:
        return self.counts.get(config, 0) / self.steps


def _resolve_candidates(candidates, repo: Repository) -> list[int]:
    if candidates is None:
        raise ValueError("candidate list must not be None")
    ordinals = []
    seen = set()
    for c in candidates:
        j = repo.config_index(c)
        if j not in seen:
            seen.add(j)
            ordinals.append(j)
    if not ordinals:
        raise ValueError("candidate list is empty")
    return sorted(ordinals)


def caruana_select(task, candidate_configs, c_max: int, repo: Repository) -> EnsembleWeights:
    """Run ``c_max`` greedy selection steps on a task's validation predictions.

    Returns the weights of the trajectory prefix with the lowest validation
    loss (earliest such prefix on ties). Step one therefore always picks the
    best single candidate.
    """
    if c_max < 1:
        raise ValueError(f"c_max must be >= 1, got {c_max}")
    t = repo.task_index(task)
    meta = repo.tasks[t]
    ordinals = _resolve_candidates(candidate_configs, repo)
    y = repo.labels(t, VAL)
    preds = {j: np.asarray(repo.predictions(t, j, VAL), dtype=np.float64) for j in ordinals}

    running = np.zeros((meta.n_val, meta.o), dtype=np.float64)
    trajectory: list[tuple[int, float]] = []
    picks: list[int] = []
    for step in range(1, c_max + 1):
        best_j = -1
        best_loss = np.inf
        for j in ordinals:
            loss = metrics.task_loss(meta, (running + preds[j]) / step, y)
            if loss < best_loss:
                best_loss = loss
                best_j = j
        running += preds[best_j]
        picks.append(best_j)
        trajectory.append((best_j, best_loss))

    losses = [loss for _, loss in trajectory]
    best_step = int(np.argmin(losses))  # earliest minimum
    counts = dict(sorted(Counter(picks[: best_step + 1]).items()))
    return EnsembleWeights(counts=counts, steps=best_step + 1, trajectory=trajectory)


def ensemble_predict(weights: EnsembleWeights, task, split, repo: Repository) -> np.ndarray:
    """Weighted average of stored member predictions; float32 like the store."""
    t = repo.task_index(task)
    if isinstance(split, str):
        split = {"val": VAL, "test": TEST}[split]
    if not weights.counts:
        raise ValueError("ensemble weights are empty")
    acc = None
    for j, count in weights.counts.items():
        arr = np.asarray(repo.predictions(t, j, split), dtype=np.float64)
        if acc is None:
            acc = count * arr
        else:
            if arr.shape != acc.shape:
                raise ValueError(f"member prediction shapes differ: {arr.shape} vs {acc.shape}")
            acc += count * arr
    return (acc / weights.steps).astype(np.float32)


def _task_ensemble_losses(repo: Repository, t: int, ordinals, c_max: int) -> tuple[float, float]:
    meta = repo.tasks[t]
    w = caruana_select(t, ordinals, c_max, repo)
    val = metrics.task_loss(meta, ensemble_predict(w, t, VAL, repo), repo.labels(t, VAL))
    test = metrics.task_loss(meta, ensemble_predict(w, t, TEST, repo), repo.labels(t, TEST))
    return val, test


def evaluate_ensemble(
    datasets,
    folds,
    configs,
    ensemble_size: int,
    repo: Repository,
    threads: int = 1,
) -> np.ndarray:
    """Ensemble losses per (dataset, fold): shape (len(datasets), len(folds), 2).

    The last axis is (val_loss, test_loss). Output ordering matches the input
    lists and does not depend on ``threads``.
    """
    ordinals = _resolve_candidates(configs, repo)
    cells = [(d, f) for d in datasets for f in folds]
    task_ids = [repo.task_index((d, f)) for d, f in cells]

    def run(t: int) -> tuple[float, float]:
        return _task_ensemble_losses(repo, t, ordinals, ensemble_size)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, task_ids))
    else:
        results = [run(t) for t in task_ids]

    out = np.array(results, dtype=np.float64).reshape(len(datasets), len(folds), 2)
    return out
