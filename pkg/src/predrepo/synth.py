"""Seeded synthetic repository generator and brute-force test oracles.

The generator makes every simulation procedure verifiable at desk scale.
Each config's predictions are a skill-weighted blend of the task's ground
truth and Gaussian noise with two components: one shared across the config's
family (correlation ``rho``) and one drawn per config and bag fold. Bagged
test predictions average the per-fold matrices, so test noise shrinks with
the number of bag folds while validation noise does not, and ensembles across
families gain more than ensembles within one.

Randomness comes from numpy's Philox counter-based generator. Every quantity
is drawn from its own stream keyed by ``(seed, purpose << 48 | a << 24 | b)``
so that, for example, regenerating one task's labels never shifts another
task's draws. Draw order within a stream is fixed: labels draw val rows then
test rows; per-config prediction streams draw, for each bag fold in order,
the fold's validation-segment noise and then its test noise. Identical specs
therefore produce byte-identical repositories. Structural metadata (task
shapes, problem assignment, class counts) is keyed on a constant instead of
the seed, so changing only the seed redraws values but never shapes.

Model per task with truth logits ``z`` (regression: z is the label itself)::

    pred = link(skill * z + sigma_j * (sqrt(rho) * E_family + sqrt(1 - rho) * E_config))

where ``link`` is the identity, the logistic function, or row softmax by
problem type, and ``sigma_j`` is the family noise level times a per-config
log-normal factor (so configs within a family differ in quality on both
splits). Fit times are log-normal around a per-family base; the very first
config (the first family's default) is always generated cheap, in the low
seconds, so it can serve as the budget fallback. Inference times are a
per-family constant times a per-config factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .portfolio import AGGREGATIONS, RAW_LOSS, NORMALIZED_LOSS
from .store import (
    TEST,
    VAL,
    ConfigMeta,
    ProblemType,
    Repository,
    TaskMeta,
)

BINARY_LOGIT_SCALE = 2.0
MULTICLASS_LOGIT_SCALE = 3.0
# log-sd of the per-config noise-level factor; kept small so that averaging
# many configs of a family beats picking its single luckiest one
CONFIG_NOISE_SPREAD = 0.10
FIT_TIME_SPREAD = 0.5  # log-sd of per-(task, config) fit times
FALLBACK_FIT_RANGE = (0.5, 3.0)
LABEL_RETRIES = 1000
ORACLE_MAX_CANDIDATES = 8

# stream purposes
_P_META = 0
_P_LABELS = 1
_P_FAMILY_NOISE = 2
_P_CONFIG_PREDS = 3
_P_FAMILY_CONST = 4
_P_TIMES = 5
_P_CONFIG_PROPS = 6
_P_SUBSAMPLE = 7  # reserved for CLI ablation draws


def rng_stream(seed: int, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Independent Philox stream for one (purpose, a, b) slot under ``seed``."""
    if not (0 <= a < 2**24 and 0 <= b < 2**24 and 0 <= purpose < 2**16):
        raise ValueError(f"stream id out of range: purpose={purpose}, a={a}, b={b}")
    tag = (purpose << 48) | (a << 24) | b
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), tag]))


def subsample_rng(seed: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Stream for seeded subsampling (ablation axes); separate from generation."""
    return rng_stream(seed, _P_SUBSAMPLE, a, b)


class SpecError(ValueError):
    """Invalid generator spec (bad field values or malformed file)."""


@dataclass(frozen=True)
class FamilySpec:
    family: str
    count: int
    skill: float
    noise: float
    rho: float


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything that determines a synthetic repository, bit for bit."""

    seed: int
    n_datasets: int
    folds: int
    families: tuple[FamilySpec, ...]
    rows_val: tuple[int, int] = (30, 60)
    rows_test: tuple[int, int] = (30, 60)
    problem_mix: dict = field(default_factory=lambda: {"binary": 0.4, "multiclass": 0.3,
                                                       "regression": 0.3})
    multiclass_classes: tuple[int, int] = (3, 5)
    bag_folds: int = 8

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not -(2**63) <= self.seed < 2**64:
            raise SpecError(f"seed must be a 64-bit integer, got {self.seed!r}")
        if self.n_datasets < 1:
            raise SpecError("n_datasets must be >= 1")
        if self.folds < 1:
            raise SpecError("folds must be >= 1")
        if self.bag_folds < 1:
            raise SpecError("bag_folds must be >= 1")
        for name, rng in (("rows_val", self.rows_val), ("rows_test", self.rows_test)):
            if len(rng) != 2 or not (2 <= rng[0] <= rng[1]):
                raise SpecError(f"{name} must be a (lo, hi) range with 2 <= lo <= hi, got {rng}")
        lo, hi = self.multiclass_classes
        if not (2 <= lo <= hi):
            raise SpecError(f"multiclass_classes must satisfy 2 <= lo <= hi, got {self.multiclass_classes}")
        if not self.families:
            raise SpecError("at least one family is required")
        names = [f.family for f in self.families]
        if len(set(names)) != len(names):
            raise SpecError(f"duplicate family names: {names}")
        for f in self.families:
            if f.count < 1:
                raise SpecError(f"family {f.family!r}: count must be >= 1")
            if not 0.0 <= f.skill <= 1.0:
                raise SpecError(f"family {f.family!r}: skill must be in [0, 1]")
            if not f.noise > 0:
                raise SpecError(f"family {f.family!r}: noise must be > 0")
            if not 0.0 <= f.rho < 1.0:
                raise SpecError(f"family {f.family!r}: rho must be in [0, 1)")
        bad = set(self.problem_mix) - {"binary", "multiclass", "regression"}
        if bad:
            raise SpecError(f"unknown problem types in mix: {sorted(bad)}")
        weights = [self.problem_mix.get(k, 0.0) for k in ("binary", "multiclass", "regression")]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise SpecError("problem_mix weights must be >= 0 and sum to a positive value")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        try:
            families = tuple(
                FamilySpec(
                    family=str(f["family"]),
                    count=int(f["count"]),
                    skill=float(f["skill"]),
                    noise=float(f["noise"]),
                    rho=float(f["rho"]),
                )
                for f in data["families"]
            )
            spec = cls(
                seed=int(data["seed"]),
                n_datasets=int(data["n_datasets"]),
                folds=int(data["folds"]),
                families=families,
                rows_val=tuple(data.get("rows_val", (30, 60))),
                rows_test=tuple(data.get("rows_test", (30, 60))),
                problem_mix=dict(data.get("problem_mix", {"binary": 0.4, "multiclass": 0.3,
                                                          "regression": 0.3})),
                multiclass_classes=tuple(data.get("multiclass_classes", (3, 5))),
                bag_folds=int(data.get("bag_folds", 8)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError(f"malformed generator spec: {e}") from None
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorSpec":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)  # JSONDecodeError carries line/column info
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_datasets": self.n_datasets,
            "folds": self.folds,
            "families": [
                {"family": f.family, "count": f.count, "skill": f.skill,
                 "noise": f.noise, "rho": f.rho}
                for f in self.families
            ],
            "rows_val": list(self.rows_val),
            "rows_test": list(self.rows_test),
            "problem_mix": dict(self.problem_mix),
            "multiclass_classes": list(self.multiclass_classes),
            "bag_folds": self.bag_folds,
        }


def _apportion_problems(mix: dict, n: int) -> list[str]:
    kinds = ("binary", "multiclass", "regression")
    weights = np.array([mix.get(k, 0.0) for k in kinds], dtype=np.float64)
    weights /= weights.sum()
    raw = weights * n
    counts = np.floor(raw).astype(int)
    frac_order = np.argsort(-(raw - counts), kind="stable")
    for i in range(n - int(counts.sum())):
        counts[frac_order[i]] += 1
    out: list[str] = []
    for kind, c in zip(kinds, counts):
        out.extend([kind] * int(c))
    return out


def _segment_sizes(n: int, parts: int) -> list[int]:
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def aggregate_bag_predictions(fold_preds) -> np.ndarray:
    """Elementwise mean of the per-fold prediction matrices."""
    arrs = [np.asarray(a, dtype=np.float64) for a in fold_preds]
    if not arrs:
        raise ValueError("need at least one bag fold")
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ValueError(f"bag prediction shapes differ: {a.shape} vs {shape}")
    return np.mean(np.stack(arrs, axis=0), axis=0)


def _draw_labels(rng: np.random.Generator, problem: ProblemType, n_val: int,
                 n_test: int, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    if problem is ProblemType.REGRESSION:
        return rng.standard_normal(n_val), rng.standard_normal(n_test)
    if problem is ProblemType.MULTICLASS:
        return (rng.integers(0, n_classes, n_val), rng.integers(0, n_classes, n_test))
    for _ in range(LABEL_RETRIES):
        y_val = (rng.random(n_val) < 0.5).astype(np.int64)
        y_test = (rng.random(n_test) < 0.5).astype(np.int64)
        if 0 < y_val.sum() < n_val and 0 < y_test.sum() < n_test:
            return y_val, y_test
    raise SpecError("could not draw binary labels with both classes present")


def _truth_logits(problem: ProblemType, y: np.ndarray, o: int) -> np.ndarray:
    if problem is ProblemType.REGRESSION:
        return np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if problem is ProblemType.BINARY:
        return (BINARY_LOGIT_SCALE * (2.0 * y - 1.0)).reshape(-1, 1)
    logits = np.zeros((len(y), o), dtype=np.float64)
    logits[np.arange(len(y)), y] = MULTICLASS_LOGIT_SCALE
    return logits


def _link(problem: ProblemType, logits: np.ndarray) -> np.ndarray:
    if problem is ProblemType.REGRESSION:
        return logits
    if problem is ProblemType.BINARY:
        return 1.0 / (1.0 + np.exp(-logits))
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def generate_repo(spec: GeneratorSpec) -> Repository:
    """Generate the repository described by ``spec`` (see the module docstring)."""
    spec.validate()
    seed = spec.seed
    D, S, B = spec.n_datasets, spec.folds, spec.bag_folds

    # metadata is keyed on a constant so that changing only the seed never
    # changes task shapes, problem assignment, or any other structure
    meta_rng = rng_stream(0, _P_META)
    assignment = _apportion_problems(spec.problem_mix, D)
    perm = meta_rng.permutation(D)
    problems = [ProblemType(assignment[perm[d]]) for d in range(D)]

    tasks: list[TaskMeta] = []
    for d in range(D):
        for fold in range(S):
            n_val = int(meta_rng.integers(spec.rows_val[0], spec.rows_val[1] + 1))
            n_test = int(meta_rng.integers(spec.rows_test[0], spec.rows_test[1] + 1))
            n_features = int(meta_rng.integers(3, 50))
            if problems[d] is ProblemType.MULTICLASS:
                o = int(meta_rng.integers(spec.multiclass_classes[0],
                                          spec.multiclass_classes[1] + 1))
            else:
                o = 1
            tasks.append(TaskMeta(f"d{d:03d}", fold, problems[d], n_val, n_test, o, n_features))

    configs: list[ConfigMeta] = []
    config_family: list[int] = []
    sigma: list[float] = []
    infer_factor: list[float] = []
    for fi, fam in enumerate(spec.families):
        props = rng_stream(seed, _P_CONFIG_PROPS, a=fi)
        noise_mult = np.exp(CONFIG_NOISE_SPREAD * props.standard_normal(fam.count))
        noise_mult[0] = 1.0  # the default config sits at the family's nominal level
        factors = props.uniform(0.5, 1.5, fam.count)
        for k in range(fam.count):
            if k == 0:
                cid = f"{fam.family}-default"
            else:
                cid = f"{fam.family}-{k:03d}"
            configs.append(ConfigMeta(cid, fam.family, is_default=(k == 0),
                                      hyperparams=f"skill={fam.skill} noise={fam.noise} rho={fam.rho}"))
            config_family.append(fi)
            sigma.append(fam.noise * float(noise_mult[k]))
            infer_factor.append(float(factors[k]))

    fam_time_base = []
    fam_infer_const = []
    for fi in range(len(spec.families)):
        const_rng = rng_stream(seed, _P_FAMILY_CONST, a=fi)
        fam_time_base.append(float(np.exp(const_rng.uniform(np.log(2.0), np.log(300.0)))))
        fam_infer_const.append(float(np.exp(const_rng.uniform(np.log(1e-5), np.log(1e-2)))))

    labels: list[tuple[np.ndarray, np.ndarray]] = []
    predictions: dict[tuple[int, int, int], np.ndarray] = {}
    evals = np.zeros((len(tasks), len(configs), 4), dtype=np.float64)

    for t, task in enumerate(tasks):
        label_rng = rng_stream(seed, _P_LABELS, a=t)
        y_val, y_test = _draw_labels(label_rng, task.problem, task.n_val, task.n_test, task.o)
        labels.append((y_val, y_test))
        z_val = _truth_logits(task.problem, y_val, task.o)
        z_test = _truth_logits(task.problem, y_test, task.o)

        fam_noise = {}
        for fi in range(len(spec.families)):
            fam_rng = rng_stream(seed, _P_FAMILY_NOISE, a=t, b=fi)
            fam_noise[fi] = (fam_rng.standard_normal(z_val.shape),
                             fam_rng.standard_normal(z_test.shape))

        seg_sizes = _segment_sizes(task.n_val, B)
        for j in range(len(configs)):
            fi = config_family[j]
            fam = spec.families[fi]
            e_fam_val, e_fam_test = fam_noise[fi]
            w_shared, w_own = np.sqrt(fam.rho), np.sqrt(1.0 - fam.rho)

            pred_rng = rng_stream(seed, _P_CONFIG_PREDS, a=t, b=j)
            val_logits = np.empty_like(z_val)
            bag_tests = []
            start = 0
            for size in seg_sizes:
                seg = slice(start, start + size)
                e_own = pred_rng.standard_normal((size, task.o))
                val_logits[seg] = (fam.skill * z_val[seg]
                                   + sigma[j] * (w_shared * e_fam_val[seg] + w_own * e_own))
                e_test = pred_rng.standard_normal(z_test.shape)
                bag_tests.append(_link(task.problem,
                                       fam.skill * z_test
                                       + sigma[j] * (w_shared * e_fam_test + w_own * e_test)))
                start += size

            val_pred = np.ascontiguousarray(_link(task.problem, val_logits), dtype="<f4")
            test_pred = np.ascontiguousarray(aggregate_bag_predictions(bag_tests), dtype="<f4")
            predictions[(t, j, VAL)] = val_pred
            predictions[(t, j, TEST)] = test_pred

            time_rng = rng_stream(seed, _P_TIMES, a=t, b=j)
            if j == 0:
                time_fit = float(time_rng.uniform(*FALLBACK_FIT_RANGE))
            else:
                time_fit = fam_time_base[fi] * float(np.exp(FIT_TIME_SPREAD * time_rng.standard_normal()))
            time_infer = fam_infer_const[fi] * infer_factor[j]

            evals[t, j, 0] = metrics.task_loss(task, val_pred, y_val)
            evals[t, j, 1] = metrics.task_loss(task, test_pred, y_test)
            evals[t, j, 2] = time_fit
            evals[t, j, 3] = time_infer

    return Repository.in_memory(tasks, configs, S, labels, predictions, evals)


# -- brute-force oracles -------------------------------------------------


def oracle_auc_pairwise(score, label) -> float:
    """O(n^2) pair-counting reference for ``auc_loss`` (ties count one half)."""
    s = np.asarray(score, dtype=np.float64).reshape(-1)
    y = np.asarray(label).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: score has {s.size}, label has {y.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("score contains NaN or infinity")
    pos = s[y == 1]
    neg = s[y != 1]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    wins = 0.0
    for a in pos:
        wins += np.count_nonzero(a > neg) + 0.5 * np.count_nonzero(a == neg)
    return float(1.0 - wins / (pos.size * neg.size))


def oracle_greedy_extension(state, candidates, task, repo: Repository,
                            aggregation: str = RAW_LOSS):
    """Exhaustive one-step-extension argmin, for checking the greedy loops.

    With a single task, ``state`` is the multiset of configs already picked
    and each candidate is scored by directly averaging all state-plus-candidate
    validation predictions (ensemble semantics). With a list of tasks,
    ``state`` is the set of selected configs and each candidate is scored by
    the mean over tasks of the minimum loss across the extended selection,
    with losses recomputed from stored predictions (portfolio semantics).
    Ties go to the lowest ordinal. Capped at 8 candidates.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    portfolio_mode = isinstance(task, list)
    cand = sorted({repo.config_index(c) for c in candidates})
    if not cand:
        raise ValueError("candidate list is empty")
    state = [repo.config_index(c) for c in state]

    if not portfolio_mode:
        if len(cand) > ORACLE_MAX_CANDIDATES:
            raise ValueError(f"M too large: oracle supports at most {ORACLE_MAX_CANDIDATES} candidates")
        t = repo.task_index(task)
        meta = repo.tasks[t]
        y = repo.labels(t, VAL)
        best_j, best_loss = -1, np.inf
        for j in cand:
            stack = [np.asarray(repo.predictions(t, k, VAL), dtype=np.float64)
                     for k in state + [j]]
            loss = metrics.task_loss(meta, np.mean(np.stack(stack, axis=0), axis=0), y)
            if loss < best_loss:
                best_loss, best_j = loss, j
        return best_j

    pool = sorted(set(state) | set(cand))
    if len(pool) > ORACLE_MAX_CANDIDATES:
        raise ValueError(f"M too large: oracle supports at most {ORACLE_MAX_CANDIDATES} candidates")
    task_ids = [repo.task_index(t) for t in task]
    if not task_ids:
        raise ValueError("task list is empty")
    loss_by_task = {}
    for t in task_ids:
        meta = repo.tasks[t]
        y = repo.labels(t, VAL)
        losses = {j: metrics.task_loss(meta, repo.predictions(t, j, VAL), y) for j in pool}
        if aggregation == NORMALIZED_LOSS:
            lo = min(losses.values())
            hi = max(losses.values())
            span = hi - lo
            losses = {j: ((v - lo) / span if span > 0 else 0.0) for j, v in losses.items()}
        loss_by_task[t] = losses

    best_j, best_obj = -1, np.inf
    for j in cand:
        if j in state:
            continue
        selection = state + [j]
        obj = float(np.mean([min(loss_by_task[t][k] for k in selection) for t in task_ids]))
        if obj < best_obj:
            best_obj, best_j = obj, j
    if best_j < 0:
        raise ValueError("no unselected candidate to extend with")
    return best_j
