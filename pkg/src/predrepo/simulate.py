"""Anytime-budget simulation over leave-one-dataset-out portfolios.

Configs are "trained" in portfolio order against recorded fit times: a config
is included iff the cumulative fit time after it still fits the budget, and
the walk stops at the first exclusion. When nothing fits, a designated cheap
fallback config stands in. Ensemble selection itself is charged no time; it
is a lookup-table operation over stored predictions.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from .ensemble import caruana_select, ensemble_predict
from .portfolio import NORMALIZED_LOSS, Portfolio, learn_portfolio, loo_train_tasks
from .store import TEST, VAL, Repository

FALLBACK_MAX_FIT_S = 60.0
TUNED_ENSEMBLE_POOL = 20  # ensemble is built on the best configs found by the search

MODE_DEFAULT = "default"
MODE_TUNED = "tuned"
MODE_TUNED_ENSEMBLE = "tuned+ensemble"
FAMILY_MODES = (MODE_DEFAULT, MODE_TUNED, MODE_TUNED_ENSEMBLE)


class BudgetPolicy:
    """Training-time budget plus the fallback used when nothing fits.

    The fallback must be quick on every task of the repository; this is
    checked at construction.
    """

    def __init__(self, budget_s: float, fallback_config, repo: Repository):
        if not budget_s > 0:
            raise ValueError(f"budget_s must be > 0, got {budget_s}")
        self.budget_s = float(budget_s)
        self.fallback_config = repo.config_index(fallback_config)
        fit_times = np.asarray(repo.eval_table[:, self.fallback_config, 2])
        worst = float(fit_times.max())
        if worst > FALLBACK_MAX_FIT_S:
            raise ValueError(
                f"fallback config {repo.configs[self.fallback_config].config_id!r} takes "
                f"{worst:.1f}s on some task, above the {FALLBACK_MAX_FIT_S:.0f}s limit"
            )


@dataclass
class SimResult:
    """Outcome of simulating one method on one task."""

    dataset_id: str
    fold: int
    included_configs: list[int]
    used_fallback: bool
    val_loss: float
    test_loss: float
    sim_fit_time_s: float
    sim_infer_time_s: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.dataset_id, self.fold)


def prefix_len(fit_times, budget_s: float) -> int:
    """How many leading entries fit: largest k with sum(times[:k]) <= budget."""
    total = 0.0
    for k, t in enumerate(fit_times):
        total += float(t)
        if total > budget_s:
            return k
    return len(fit_times)


def _filter_order(order: list[int], t: int, policy: BudgetPolicy,
                  repo: Repository) -> tuple[list[int], bool]:
    times = [repo.eval_table[t, j, 2] for j in order]
    k = prefix_len(times, policy.budget_s)
    if k == 0:
        return [policy.fallback_config], True
    return order[:k], False


def anytime_filter(portfolio: Portfolio, task, policy: BudgetPolicy,
                   repo: Repository) -> tuple[list[int], bool]:
    """Budget-filter a portfolio for one task; returns (included, used_fallback)."""
    if not portfolio.configs:
        raise ValueError("portfolio is empty")
    t = repo.task_index(task)
    return _filter_order(list(portfolio.configs), t, policy, repo)


def _ensemble_result(repo: Repository, t: int, candidates: list[int], trained: list[int],
                     used_fallback: bool, c_max: int) -> SimResult:
    # candidates feed the greedy selection; trained is what the budget paid for
    meta = repo.tasks[t]
    w = caruana_select(t, candidates, c_max, repo)
    val = metrics.task_loss(meta, ensemble_predict(w, t, VAL, repo), repo.labels(t, VAL))
    test = metrics.task_loss(meta, ensemble_predict(w, t, TEST, repo), repo.labels(t, TEST))
    fit = float(sum(repo.eval_table[t, j, 2] for j in trained))
    infer = float(sum(repo.eval_table[t, j, 3] for j, c in w.counts.items() if c > 0))
    return SimResult(meta.dataset_id, meta.fold, list(trained), used_fallback,
                     val, test, fit, infer)


def _loo_portfolios(repo: Repository, n_max: int, aggregation: str,
                    candidates: list[int] | None = None,
                    train_datasets: dict[str, list[str]] | None = None) -> dict[str, Portfolio]:
    """One portfolio per dataset, learned on every other dataset's tasks.

    ``train_datasets`` optionally restricts, per held-out dataset, which other
    datasets contribute training tasks (used by ablations).
    """
    if candidates is None:
        candidates = list(range(repo.n_configs))
    portfolios = {}
    for dataset in repo.datasets:
        train = loo_train_tasks(repo, dataset)
        if train_datasets is not None:
            allowed = set(train_datasets[dataset])
            train = [t for t in train if t.dataset_id in allowed]
        if not train:
            raise ValueError(f"no training tasks remain for held-out dataset {dataset!r}")
        portfolios[dataset] = learn_portfolio(train, candidates, n_max, aggregation, repo)
    return portfolios


def _simulate_loo(repo: Repository, policy: BudgetPolicy, n_max: int, c_max: int,
                  aggregation: str, candidates: list[int] | None = None,
                  train_datasets: dict[str, list[str]] | None = None,
                  threads: int = 1) -> tuple[list[SimResult], dict[str, Portfolio]]:
    if len(repo.datasets) < 2:
        raise ValueError("leave-one-out simulation needs at least 2 datasets")
    portfolios = _loo_portfolios(repo, n_max, aggregation, candidates, train_datasets)

    def run(t: int) -> SimResult:
        meta = repo.tasks[t]
        included, fb = anytime_filter(portfolios[meta.dataset_id], t, policy, repo)
        return _ensemble_result(repo, t, included, included, fb, c_max)

    task_ids = list(range(repo.n_tasks))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, task_ids))
    else:
        results = [run(t) for t in task_ids]
    return results, portfolios


def simulate_portfolio(repo: Repository, policy: BudgetPolicy, n_max: int,
                       c_max: int, aggregation: str = NORMALIZED_LOSS,
                       threads: int = 1) -> list[SimResult]:
    """Anytime LOO simulation: one SimResult per task, in repository task order."""
    results, _ = _simulate_loo(repo, policy, n_max, c_max, aggregation, threads=threads)
    return results


def _family_order(repo: Repository, family: str, order_seed: int | None) -> list[int]:
    order = repo.family_configs(family)
    if order_seed is not None:
        tag = zlib.crc32(family.encode("utf-8"))
        rng = np.random.Generator(np.random.Philox(key=[order_seed & (2**64 - 1), tag]))
        order = [order[i] for i in rng.permutation(len(order))]
    return order


def simulate_single_family(repo: Repository, family: str, mode: str,
                           policy: BudgetPolicy, c_max: int,
                           order_seed: int | None = None,
                           threads: int = 1) -> list[SimResult]:
    """Simulate one model family on every task.

    ``default`` reports the family's default config as stored. ``tuned`` walks
    the family's configs in repository order (or a seeded shuffle) under the
    budget and keeps the one with the best stored validation loss.
    ``tuned+ensemble`` runs greedy selection over the best 20 configs that fit.
    """
    if mode not in FAMILY_MODES:
        raise ValueError(f"mode must be one of {FAMILY_MODES}, got {mode!r}")
    members = repo.family_configs(family)
    defaults = [j for j in members if repo.configs[j].is_default]
    if not defaults:
        raise ValueError(f"family {family!r} has no default config")
    default = defaults[0]
    order = _family_order(repo, family, order_seed)

    def run(t: int) -> SimResult:
        meta = repo.tasks[t]
        if mode == MODE_DEFAULT:
            rec = repo.eval_table[t, default]
            return SimResult(meta.dataset_id, meta.fold, [default], False,
                             float(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]))
        included, fb = _filter_order(order, t, policy, repo)
        if mode == MODE_TUNED:
            best = min(included, key=lambda j: (repo.eval_table[t, j, 0], j))
            rec = repo.eval_table[t, best]
            fit = float(sum(repo.eval_table[t, j, 2] for j in included))
            return SimResult(meta.dataset_id, meta.fold, list(included), fb,
                             float(rec[0]), float(rec[1]), fit, float(rec[3]))
        pool = sorted(included, key=lambda j: (repo.eval_table[t, j, 0], j))[:TUNED_ENSEMBLE_POOL]
        return _ensemble_result(repo, t, pool, included, fb, c_max)

    task_ids = list(range(repo.n_tasks))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_:
            return list(pool_.map(run, task_ids))
    return [run(t) for t in task_ids]
