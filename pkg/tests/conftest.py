from __future__ import annotations

import numpy as np
import pytest

from predrepo import (
    ConfigMeta,
    FamilySpec,
    GeneratorSpec,
    ProblemType,
    Repository,
    TaskMeta,
    generate_repo,
    task_loss,
)
from predrepo.store import TEST, VAL


def make_handmade_repo(seed: int = 0) -> Repository:
    """Small mixed-problem repository built directly from arrays.

    Three datasets (regression, binary, multiclass) with 2 folds each and 3
    configs in 2 families. Stored losses are computed from the stored float32
    predictions, like any valid repository.
    """
    rng = np.random.default_rng(seed)
    tasks = []
    for d, problem, o in (("reg", ProblemType.REGRESSION, 1),
                          ("bin", ProblemType.BINARY, 1),
                          ("mc", ProblemType.MULTICLASS, 3)):
        for fold in range(2):
            tasks.append(TaskMeta(d, fold, problem, n_val=12, n_test=10, o=o, n_features=5))
    configs = [
        ConfigMeta("alpha-default", "alpha", is_default=True),
        ConfigMeta("alpha-001", "alpha"),
        ConfigMeta("beta-default", "beta", is_default=True),
    ]

    labels = []
    predictions = {}
    evals = np.zeros((len(tasks), len(configs), 4))
    for t, task in enumerate(tasks):
        if task.problem is ProblemType.REGRESSION:
            y_val = rng.standard_normal(task.n_val)
            y_test = rng.standard_normal(task.n_test)
        elif task.problem is ProblemType.BINARY:
            y_val = np.array([0, 1] * (task.n_val // 2))
            y_test = np.array([0, 1] * (task.n_test // 2))
        else:
            y_val = rng.integers(0, task.o, task.n_val)
            y_test = rng.integers(0, task.o, task.n_test)
        labels.append((y_val, y_test))
        for j in range(len(configs)):
            for split, n in ((VAL, task.n_val), (TEST, task.n_test)):
                if task.problem is ProblemType.REGRESSION:
                    arr = rng.standard_normal((n, 1))
                elif task.problem is ProblemType.BINARY:
                    arr = rng.random((n, 1))
                else:
                    raw = rng.random((n, task.o))
                    arr = raw / raw.sum(axis=1, keepdims=True)
                predictions[(t, j, split)] = arr.astype(np.float32)
            evals[t, j, 0] = task_loss(task, predictions[(t, j, VAL)], y_val)
            evals[t, j, 1] = task_loss(task, predictions[(t, j, TEST)], y_test)
            evals[t, j, 2] = float(rng.uniform(1, 100))
            evals[t, j, 3] = float(rng.uniform(1e-4, 1e-2))
    return Repository.in_memory(tasks, configs, 2, labels, predictions, evals)


def small_spec(seed: int = 11, **overrides) -> GeneratorSpec:
    kwargs = dict(
        seed=seed,
        n_datasets=4,
        folds=2,
        families=(
            FamilySpec("gbm", 4, 0.85, 0.5, 0.3),
            FamilySpec("mlp", 3, 0.6, 0.8, 0.2),
        ),
        rows_val=(20, 30),
        rows_test=(20, 30),
        problem_mix={"binary": 0.5, "multiclass": 0.25, "regression": 0.25},
        bag_folds=4,
    )
    kwargs.update(overrides)
    return GeneratorSpec(**kwargs)


@pytest.fixture()
def handmade_repo() -> Repository:
    return make_handmade_repo()


@pytest.fixture(scope="session")
def synth_repo() -> Repository:
    return generate_repo(small_spec())
