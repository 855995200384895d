"""Command-line surface: generate, validate, ensemble, portfolio, simulate,
ablate, report.

All tabular output is CSV with floats at 6 significant digits. Data goes to
stdout or the file named by --out; diagnostics go to stderr. Exit codes:
0 success, 2 input-parse error, 3 semantic error. Results never depend on
--threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .aggregate import MethodResults, average_rank, mean_normalized_error, rescaled_loss, winrate
from .ensemble import DEFAULT_STEPS, evaluate_ensemble
from .portfolio import DEFAULT_SIZE, NORMALIZED_LOSS, RAW_LOSS, learn_portfolio, loo_train_tasks
from .simulate import (
    FAMILY_MODES,
    MODE_DEFAULT,
    MODE_TUNED,
    MODE_TUNED_ENSEMBLE,
    BudgetPolicy,
    SimResult,
    _simulate_loo,
    simulate_portfolio,
    simulate_single_family,
)
from .store import Repository, StoreError, open_repo, validate_repo, write_repo
from .synth import GeneratorSpec, SpecError, generate_repo, subsample_rng

PORTFOLIO_ENSEMBLE = "Portfolio (ensemble)"
PORTFOLIO_SINGLE = "Portfolio"

AGG_FLAGS = {"raw": RAW_LOSS, "normalized": NORMALIZED_LOSS}

TASK_CSV_HEADER = [
    "method", "dataset", "fold", "val_loss", "test_loss",
    "time_fit_s", "time_infer_s", "used_fallback", "included_configs",
]
TABLE2_HEADER = ["method", "normalized-error", "rank", "time fit (s)", "time infer (s)"]
WINRATE_HEADER = ["method", "winrate", ">", "<", "=", "time fit (s)", "time infer (s)",
                  "loss (rescaled)", "rank"]

AXES = ("configs-per-family", "n-train-datasets", "portfolio-size", "ensemble-members")


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _write_csv(path: str | None, header: list[str], rows: list[list[str]]) -> None:
    if path is None:
        out = sys.stdout
        _dump_csv(out, header, rows)
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            _dump_csv(f, header, rows)


def _dump_csv(stream, header: list[str], rows: list[list[str]]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_strs(text: str) -> list[str]:
    return [v for v in text.split(",") if v != ""]


def _default_fallback(repo: Repository) -> int:
    """Config whose worst-case fit time is smallest (a fast, safe baseline)."""
    worst = np.asarray(repo.eval_table[:, :, 2]).max(axis=0)
    return int(np.argmin(worst))


def _policy(repo: Repository, args) -> BudgetPolicy:
    fallback = args.fallback if args.fallback is not None else _default_fallback(repo)
    return BudgetPolicy(args.budget_s, fallback, repo)


def _sim_rows(repo: Repository, method: str, results: list[SimResult]) -> list[list[str]]:
    rows = []
    for r in results:
        ids = "|".join(repo.configs[j].config_id for j in r.included_configs)
        rows.append([
            method, r.dataset_id, str(r.fold), _fmt(r.val_loss), _fmt(r.test_loss),
            _fmt(r.sim_fit_time_s), _fmt(r.sim_infer_time_s),
            "true" if r.used_fallback else "false", ids,
        ])
    return rows


def _method_results(name: str, results: list[SimResult]) -> MethodResults:
    return MethodResults(
        method=name,
        losses={r.key: r.test_loss for r in results},
        time_fit={r.key: r.sim_fit_time_s for r in results},
        time_infer={r.key: r.sim_infer_time_s for r in results},
    )


def _family_method_table(repo: Repository, policy: BudgetPolicy, c_max: int,
                         order_seed: int | None, threads: int) -> dict[str, list[SimResult]]:
    labels = {MODE_DEFAULT: "default", MODE_TUNED: "tuned", MODE_TUNED_ENSEMBLE: "tuned + ensemble"}
    out: dict[str, list[SimResult]] = {}
    for family in repo.families:
        for mode in FAMILY_MODES:
            out[f"{family} ({labels[mode]})"] = simulate_single_family(
                repo, family, mode, policy, c_max, order_seed=order_seed, threads=threads)
    return out


def _summary_rows(methods: dict[str, list[SimResult]]) -> list[list[str]]:
    tables = [_method_results(name, results) for name, results in methods.items()]
    errors = mean_normalized_error(tables)
    ranks = average_rank(tables)
    rows = []
    for m in tables:
        fit = float(np.mean(list(m.time_fit.values())))
        infer = float(np.mean(list(m.time_infer.values())))
        rows.append((errors[m.method], m.method,
                     [m.method, _fmt(errors[m.method]), _fmt(ranks[m.method]), _fmt(fit), _fmt(infer)]))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in rows]


# -- subcommands ----------------------------------------------------------


def cmd_generate(args) -> int:
    try:
        spec = GeneratorSpec.from_file(args.spec)
    except FileNotFoundError:
        print(f"error: spec file not found: {args.spec}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: spec parse failure at line {e.lineno}, column {e.colno}: {e.msg}",
              file=sys.stderr)
        return 2
    repo = generate_repo(spec)
    write_repo(repo, args.out)
    total = sum(os.path.getsize(Path(args.out) / n)
                for n in ("manifest.json", "labels.bin", "evals.bin", "preds.idx", "preds.blob"))
    print(f"D={spec.n_datasets} S={spec.folds} M={repo.n_configs} bytes={total}")
    return 0


def cmd_validate(args) -> int:
    repo = open_repo(args.repo)
    report = validate_repo(repo)
    for entry in report:
        print(entry)
    if report:
        print(f"error: {len(report)} violation(s) found", file=sys.stderr)
        return 3
    print("OK: repository is valid")
    return 0


def cmd_ensemble(args) -> int:
    repo = open_repo(args.repo)
    datasets = _csv_strs(args.datasets) if args.datasets else repo.datasets
    folds = args.folds if args.folds is not None else list(range(repo.folds_per_dataset))
    configs = _csv_strs(args.configs) if args.configs else list(range(repo.n_configs))
    tensor = evaluate_ensemble(datasets, folds, configs, args.ensemble_size, repo,
                               threads=args.threads)
    rows = []
    for i, d in enumerate(datasets):
        for k, f in enumerate(folds):
            rows.append([d, str(f), _fmt(tensor[i, k, 0]), _fmt(tensor[i, k, 1])])
    _write_csv(args.out, ["dataset", "fold", "val_loss", "test_loss"], rows)
    return 0


def cmd_portfolio(args) -> int:
    repo = open_repo(args.repo)
    if args.hold_out is not None:
        train = loo_train_tasks(repo, args.hold_out)
    else:
        train = repo.tasks
    pf = learn_portfolio(train, list(range(repo.n_configs)), args.n_max,
                         AGG_FLAGS[args.aggregation], repo)
    rows = [
        [str(i), repo.configs[j].config_id, _fmt(pf.objective_trajectory[i])]
        for i, j in enumerate(pf.configs)
    ]
    _write_csv(args.out, ["position", "config_id", "objective"], rows)
    return 0


def cmd_simulate(args) -> int:
    repo = open_repo(args.repo)
    policy = _policy(repo, args)
    agg = AGG_FLAGS[args.aggregation]

    methods: dict[str, list[SimResult]] = {}
    methods[PORTFOLIO_ENSEMBLE] = simulate_portfolio(
        repo, policy, args.n_max, args.c_max, agg, threads=args.threads)
    methods[PORTFOLIO_SINGLE] = simulate_portfolio(
        repo, policy, args.n_max, 1, agg, threads=args.threads)
    methods.update(_family_method_table(repo, policy, args.c_max, args.seed, args.threads))

    _write_csv(args.out, TASK_CSV_HEADER, _sim_rows(repo, PORTFOLIO_ENSEMBLE,
                                                    methods[PORTFOLIO_ENSEMBLE]))
    if args.methods_out:
        rows = []
        for name, results in methods.items():
            rows.extend(_sim_rows(repo, name, results))
        _write_csv(args.methods_out, TASK_CSV_HEADER, rows)

    _dump_csv(sys.stdout, TABLE2_HEADER, _summary_rows(methods))
    return 0


def _ablation_candidates(repo: Repository, value: int, seed: int) -> list[int]:
    chosen: list[int] = []
    for fi, family in enumerate(repo.families):
        members = repo.family_configs(family)
        if value > len(members):
            raise ValueError(
                f"configs-per-family value {value} exceeds family {family!r} size {len(members)}")
        rng = subsample_rng(seed, a=fi, b=value)
        take = rng.choice(len(members), size=value, replace=False)
        chosen.extend(members[i] for i in sorted(take))
    return sorted(chosen)


def _ablation_train_datasets(repo: Repository, value: int, seed: int) -> dict[str, list[str]]:
    datasets = repo.datasets
    if value > len(datasets) - 1:
        raise ValueError(
            f"n-train-datasets value {value} exceeds available count {len(datasets) - 1}")
    out = {}
    for di, dataset in enumerate(datasets):
        others = [d for d in datasets if d != dataset]
        rng = subsample_rng(seed, a=di, b=value)
        take = rng.choice(len(others), size=value, replace=False)
        out[dataset] = [others[i] for i in sorted(take)]
    return out


def cmd_ablate(args) -> int:
    repo = open_repo(args.repo)
    policy = _policy(repo, args)
    agg = AGG_FLAGS[args.aggregation]
    if any(v < 1 for v in args.values):
        raise ValueError(f"axis values must be positive, got {args.values}")
    if args.axis == "portfolio-size" and max(args.values) > repo.n_configs:
        raise ValueError(
            f"portfolio-size value {max(args.values)} exceeds config count {repo.n_configs}")

    # fixed single-family table anchors the normalization across all runs
    base = {name: _method_results(name, results)
            for name, results in _family_method_table(repo, policy, args.c_max,
                                                      None, args.threads).items()}

    rows = []
    per_value: dict[int, list[float]] = {v: [] for v in args.values}
    for value in args.values:
        for seed in args.seeds:
            n_max, c_max = args.n_max, args.c_max
            candidates = None
            train_datasets = None
            if args.axis == "portfolio-size":
                n_max = value
            elif args.axis == "ensemble-members":
                c_max = value
            elif args.axis == "configs-per-family":
                candidates = _ablation_candidates(repo, value, seed)
            else:
                train_datasets = _ablation_train_datasets(repo, value, seed)
            results, portfolios = _simulate_loo(
                repo, policy, n_max, c_max, agg,
                candidates=candidates, train_datasets=train_datasets, threads=args.threads)
            tables = list(base.values()) + [_method_results(PORTFOLIO_ENSEMBLE, results)]
            err = mean_normalized_error(tables)[PORTFOLIO_ENSEMBLE]
            train_obj = float(np.mean([p.objective_trajectory[-1]
                                       for p in portfolios.values()]))
            per_value[value].append(err)
            rows.append([args.axis, str(value), str(seed), _fmt(err), _fmt(train_obj)])

    _write_csv(args.out, ["axis", "value", "seed", "mean_normalized_error",
                          "mean_train_objective"], rows)

    summary = []
    for value in args.values:
        errs = np.array(per_value[value])
        se = float(errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else 0.0
        summary.append([args.axis, str(value), _fmt(float(errs.mean())), _fmt(se),
                        str(errs.size)])
    _dump_csv(sys.stdout, ["axis", "value", "mean", "stderr", "n_seeds"], summary)
    return 0


def _read_method_tables(paths: list[str]) -> list[MethodResults]:
    tables: list[MethodResults] = []
    names: set[str] = set()
    for path in paths:
        per_method: dict[str, MethodResults] = {}
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            required = {"method", "dataset", "fold", "test_loss"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise StoreError(
                    f"{path}: results CSV must have columns {sorted(required)}")
            for row in reader:
                name = row["method"]
                if name not in per_method:
                    final = name
                    k = 2
                    while final in names:
                        final = f"{name}#{k}"
                        k += 1
                    names.add(final)
                    per_method[name] = MethodResults(final, {}, {}, {})
                m = per_method[name]
                key = (row["dataset"], int(row["fold"]))
                m.losses[key] = float(row["test_loss"])
                if row.get("time_fit_s"):
                    m.time_fit[key] = float(row["time_fit_s"])
                if row.get("time_infer_s"):
                    m.time_infer[key] = float(row["time_infer_s"])
        tables.extend(per_method.values())
    if not tables:
        raise StoreError("no methods found in the given results files")
    return tables


def _mean_or_nan(d: dict) -> float:
    return float(np.mean(list(d.values()))) if d else float("nan")


def cmd_report(args) -> int:
    tables = _read_method_tables(args.results)
    if args.mode == "table2":
        errors = mean_normalized_error(tables)
        ranks = average_rank(tables)
        rows = []
        for m in tables:
            rows.append((errors[m.method], m.method,
                         [m.method, _fmt(errors[m.method]), _fmt(ranks[m.method]),
                          _fmt(_mean_or_nan(m.time_fit)), _fmt(_mean_or_nan(m.time_infer))]))
        rows.sort(key=lambda r: (r[0], r[1]))
        _write_csv(args.out, TABLE2_HEADER, [r[2] for r in rows])
        return 0

    by_name = {m.method: m for m in tables}
    reference = args.reference if args.reference is not None else tables[0].method
    if reference not in by_name:
        raise KeyError(f"unknown reference method: {reference!r}")
    if len(tables) > 1:
        rescaled = rescaled_loss(tables)
        ranks = average_rank(tables)
    else:
        rescaled = {tables[0].method: 0.0}
        ranks = {tables[0].method: 1.0}
    rows = []
    for m in tables:
        wr = winrate(m, by_name[reference], fold_count=None)
        rows.append((rescaled[m.method], m.method,
                     [m.method, f"{wr.winrate:.3f}", str(wr.n_better), str(wr.n_worse),
                      str(wr.n_equal), _fmt(_mean_or_nan(m.time_fit)),
                      _fmt(_mean_or_nan(m.time_infer)), _fmt(rescaled[m.method]),
                      _fmt(ranks[m.method])]))
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_csv(args.out, WINRATE_HEADER, [r[2] for r in rows])
    return 0


# -- parser ---------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, repo: bool = True, out_required: bool = False):
    if repo:
        p.add_argument("--repo", required=True, help="repository directory")
    p.add_argument("--out", required=out_required, default=None, help="output CSV path")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallelism cap; never affects results")
    p.add_argument("--seed", type=int, default=None, help="seed for optional shuffling")


def _add_budget(p: argparse.ArgumentParser, default_budget: float):
    p.add_argument("--budget-s", type=float, default=default_budget,
                   help="training-time budget in seconds")
    p.add_argument("--n-max", type=int, default=DEFAULT_SIZE, help="max portfolio size")
    p.add_argument("--c-max", type=int, default=DEFAULT_STEPS, help="greedy ensemble steps")
    p.add_argument("--aggregation", choices=sorted(AGG_FLAGS), default="normalized")
    p.add_argument("--fallback", default=None,
                   help="fallback config id (default: config with smallest worst-case fit time)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predrepo",
        description="Prediction-repository simulation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic repository from a spec file")
    p.add_argument("--spec", required=True, help="generator spec (JSON)")
    p.add_argument("--out", required=True, help="output repository directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check repository invariants")
    p.add_argument("--repo", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ensemble", help="evaluate greedy ensembles over given configs")
    _add_common(p)
    p.add_argument("--datasets", default=None, help="comma-separated dataset ids (default all)")
    p.add_argument("--folds", type=_csv_ints, default=None, help="comma-separated folds (default all)")
    p.add_argument("--configs", default=None, help="comma-separated config ids (default all)")
    p.add_argument("--ensemble-size", type=int, default=DEFAULT_STEPS)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("portfolio", help="learn a greedy portfolio from stored losses")
    _add_common(p)
    p.add_argument("--n-max", type=int, default=DEFAULT_SIZE)
    p.add_argument("--aggregation", choices=sorted(AGG_FLAGS), default="normalized")
    p.add_argument("--hold-out", default=None, help="dataset to exclude from training tasks")
    p.set_defaults(func=cmd_portfolio)

    p = sub.add_parser("simulate", help="anytime LOO portfolio simulation plus family baselines")
    _add_common(p, out_required=True)
    _add_budget(p, default_budget=14400.0)
    p.add_argument("--methods-out", default=None,
                   help="optional CSV with per-task rows for every compared method")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", help="axis ablations over repeated seeded LOO simulations")
    _add_common(p, out_required=True)
    _add_budget(p, default_budget=14400.0)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", type=_csv_ints, required=True)
    p.add_argument("--seeds", type=_csv_ints, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate per-task result CSVs into comparison tables")
    p.add_argument("--results", nargs="+", required=True, help="per-task result CSV files")
    p.add_argument("--out", default=None)
    p.add_argument("--mode", choices=("table2", "winrate"), default="table2")
    p.add_argument("--reference", default=None,
                   help="winrate reference method (default: first method)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StoreError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyError as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
