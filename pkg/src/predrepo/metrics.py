"""Task losses: RMSE, AUC loss (1 - AUC), and log loss, plus per-task dispatch.

All three are minimized; AUC is reported as 1 - AUC so downstream code never
needs to know a metric's direction. Computation is float64 regardless of the
input dtype.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .store import ProblemType, TaskMeta

LOG_LOSS_EPS = 1e-15

METRIC_BY_PROBLEM = {
    ProblemType.BINARY: "auc_loss",
    ProblemType.MULTICLASS: "log_loss",
    ProblemType.REGRESSION: "rmse",
}


def _as_1d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinity")
    return arr


def rmse(pred, target) -> float:
    """Root mean squared error."""
    p = _as_1d(pred, "pred")
    t = _as_1d(target, "target")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: pred has {p.size}, target has {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def auc_loss(score, label) -> float:
    """1 - AUC via the rank statistic, ties counting one half.

    Equivalent to the trapezoidal ROC area and to the pairwise win
    probability; O(n log n).
    """
    s = _as_1d(score, "score")
    y = np.asarray(label).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: score has {s.size}, label has {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0 or 1)")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(s, method="average")
    auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return float(1.0 - auc)


def log_loss(probs, label) -> float:
    """Mean negative log likelihood of the true class, clipped at 1e-15."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError(f"probs must be a (n, k) matrix with k >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probs contains NaN or infinity")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise ValueError("probs rows are not row-stochastic within 1e-5")
    y = np.asarray(label).reshape(-1)
    if y.size != p.shape[0]:
        raise ValueError(f"length mismatch: probs has {p.shape[0]} rows, label has {y.size}")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ValueError("label out of range")
    picked = np.clip(p[np.arange(p.shape[0]), y.astype(np.int64)], LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS)
    return float(-np.mean(np.log(picked)))


def task_loss(task: TaskMeta, pred, target) -> float:
    """Dispatch to the task's metric given a (rows, o) prediction matrix."""
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(-1, 1)
    if p.shape[1] != task.o:
        raise ValueError(f"prediction has {p.shape[1]} columns, task {task.key} has o={task.o}")
    if task.problem is ProblemType.REGRESSION:
        return rmse(p[:, 0], target)
    if task.problem is ProblemType.BINARY:
        return auc_loss(p[:, 0], target)
    return log_loss(p, target)
