"""Experiment runner and command line interface.

Benchmark experiments live in flat INI files with four sections
(network / training / target / experiment); one file per benchmark ships
under ``configs/``.  Verbs:

    softdag run <config>        seeded multi-trial run of one benchmark
    softdag bench <config-dir>  run every config, emit a summary table
    softdag extract <weights>   print the most likely expression per output
    softdag gen-data <config>   write a generated dataset as CSV

Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.
A low convergence rate is reported, never asserted.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import statistics
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bases import resolve_bases
from .data import (
    BUILTIN_TARGETS,
    DatasetSource,
    TargetSpec,
    classification_accuracy,
    generate,
    load_idx,
    split,
)
from .expression import (
    Choices,
    Expr,
    Interval,
    ParseError,
    evaluate_tree_batch,
    input_indices,
    parse as parse_expression,
    sample_domain,
    simplify,
    to_string,
    values_equivalent,
    dag_to_expression,
)
from .network import (
    ConfigError,
    NetworkConfig,
    WeightsFormatError,
    build_network,
    load_network,
    save_network,
)
from .rng import DATA_STREAM, SPLIT_STREAM, TRIAL_STREAM, derive_rng, derive_seed
from .sampler import evaluate_recurrent, most_likely_dag
from .trainer import CsvTrainLogger, TrainConfig, VERDICT_CONVERGED, train

EQ_POINTS = 512  # samples for numeric equivalence checks


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    network: NetworkConfig
    training: TrainConfig
    target: TargetSpec
    target_expressions: tuple[Expr, ...] | None
    equivalence: str  # numeric | exact | none
    tolerance: float
    trials: int
    extended: bool
    reference_expression: Expr | None = None
    reference_ranges: tuple = ()
    idx_images: str = ""
    idx_labels: str = ""
    classes: tuple[int, ...] = ()
    test_fraction: float = 0.1


# ---------------------------------------------------------------------------
# config file parsing


def _split_list(raw: str) -> list[str]:
    return [tok for tok in raw.replace(",", " ").split() if tok]


_NAMED_CONSTANTS = {"pi": math.pi, "e": math.e}


def _parse_constants(raw: str) -> tuple[float, ...]:
    out = []
    for tok in _split_list(raw):
        if tok.lower() in _NAMED_CONSTANTS:
            out.append(_NAMED_CONSTANTS[tok.lower()])
        else:
            out.append(float(tok))
    return tuple(out)


def _parse_ranges(raw: str) -> tuple:
    """Per-dimension ranges: ``lo..hi`` intervals or ``{a,b,c}`` sets, ';'-separated."""
    dims = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        if part.startswith("{") and part.endswith("}"):
            values = tuple(float(tok) for tok in _split_list(part[1:-1]))
            dims.append(Choices(values))
        elif ".." in part:
            lo, hi = part.split("..")
            dims.append(Interval(float(lo), float(hi)))
        else:
            raise ConfigError(f"bad range {part!r} (use lo..hi or {{a,b}})")
    if not dims:
        raise ConfigError("empty ranges")
    return tuple(dims)


def _get(cp, section, key, cast, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = cp.get(section, key).strip()
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad [{section}] {key} = {raw!r}: {exc}") from exc


def _expression_fn(exprs: tuple[Expr, ...]):
    def fn(X: np.ndarray) -> np.ndarray:
        return np.stack([evaluate_tree_batch(e, X) for e in exprs], axis=1)

    return fn


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(path)
    for section in ("network", "training", "target", "experiment"):
        if not cp.has_section(section):
            raise ConfigError(f"{path}: missing [{section}] section")

    kind = _get(cp, "target", "kind", str, default="explicit")
    inputs = _get(cp, "target", "inputs", int, required=kind != "classification")
    outputs = _get(cp, "target", "outputs", int, default=1)
    ranges = ()
    if cp.has_option("target", "ranges"):
        ranges = _parse_ranges(cp.get("target", "ranges"))

    target_exprs = None
    fn = None
    derived = None
    builtin_name = _get(cp, "target", "builtin", str, default="")
    if builtin_name:
        if builtin_name not in BUILTIN_TARGETS:
            raise ConfigError(f"unknown builtin target {builtin_name!r}")
        builtin = BUILTIN_TARGETS[builtin_name]()
        fn = builtin.fn
        inputs = builtin.input_count
        outputs = builtin.output_count
        if not ranges:
            ranges = builtin.input_ranges
    elif cp.has_option("target", "expression"):
        raw = cp.get("target", "expression")
        try:
            target_exprs = tuple(parse_expression(p.strip()) for p in raw.split("|"))
        except ParseError as exc:
            raise ConfigError(f"{path}: bad target expression: {exc}") from exc
        outputs = len(target_exprs)
        for e in target_exprs:
            used = input_indices(e)
            if used and max(used) >= inputs:
                raise ConfigError(
                    f"{path}: expression uses x{max(used)} but inputs = {inputs}"
                )
        fn = _expression_fn(target_exprs)
    elif kind not in ("classification", "implicit"):
        raise ConfigError(f"{path}: [target] needs an expression or builtin")

    if kind == "implicit":
        derived_raw = _get(cp, "target", "derived", str, required=True)
        try:
            derived_expr = parse_expression(derived_raw)
        except ParseError as exc:
            raise ConfigError(f"{path}: bad derived expression: {exc}") from exc
        derived = lambda free: evaluate_tree_batch(derived_expr, free)  # noqa: E731
        if len(ranges) != inputs - 1:
            raise ConfigError(
                f"{path}: implicit targets need ranges for the {inputs - 1} free"
                " dimensions"
            )
    elif kind != "classification" and len(ranges) != inputs:
        raise ConfigError(f"{path}: expected {inputs} ranges, found {len(ranges)}")

    name = _get(cp, "experiment", "name", str, default=path.stem)
    target = TargetSpec(
        kind=kind,
        input_count=inputs if kind != "classification" else 0,
        output_count=outputs,
        input_ranges=ranges,
        fn=fn,
        derived=derived,
        constant_target=_get(cp, "target", "constant", float, default=1.0),
        target_depth=_get(cp, "target", "target_depth", int, default=1),
        name=name,
    )

    classes = ()
    idx_images = idx_labels = ""
    test_fraction = 0.1
    if kind == "classification":
        idx_images = _get(cp, "target", "images", str, required=True)
        idx_labels = _get(cp, "target", "labels", str, required=True)
        classes = tuple(int(c) for c in _split_list(_get(cp, "target", "classes", str, required=True)))
        test_fraction = _get(cp, "target", "test_fraction", float, default=0.1)
        input_count = _get(cp, "target", "pixels", int, default=784)
        outputs = len(classes)
    else:
        input_count = inputs

    basis_names = tuple(_split_list(_get(cp, "network", "bases", str, required=True)))
    try:
        resolve_bases(basis_names)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    network = NetworkConfig(
        bases=basis_names,
        input_count=input_count,
        constants=_parse_constants(_get(cp, "network", "constants", str, default="")),
        output_count=outputs,
        depth=_get(cp, "network", "depth", int, required=True),
        temperature=_get(cp, "network", "temperature", float, default=1.0),
        last_layer_temperature=_get(
            cp, "network", "last_layer_temperature", float, default=1.0
        ),
        skip_connections=_get(cp, "network", "skip_connections", bool, default=True),
    )

    training = TrainConfig(
        sample_count=_get(cp, "training", "samples", int, required=True),
        select_count=_get(cp, "training", "select", int, required=True),
        variance=_get(cp, "training", "variance", float, required=True),
        learning_rate=_get(cp, "training", "learning_rate", float, required=True),
        max_epochs=_get(cp, "training", "max_epochs", int, default=1000),
        patience=_get(cp, "training", "patience", int, default=30),
        recurrence_depth=_get(cp, "training", "recurrence_depth", int, default=1),
        rank_reweight=_get(cp, "training", "rank_reweight", bool, default=False),
        rank_reweight_increasing=_get(
            cp, "training", "rank_reweight_increasing", bool, default=False
        ),
        depth_scales_logprob=_get(
            cp, "training", "depth_scales_logprob", bool, default=True
        ),
        batch_size=_get(cp, "training", "batch_size", int, default=1000),
        seed=_get(cp, "training", "seed", int, default=0),
    )

    reference_expr = None
    reference_ranges = ()
    if cp.has_option("experiment", "reference"):
        reference_expr = parse_expression(cp.get("experiment", "reference"))
    if cp.has_option("experiment", "reference_ranges"):
        reference_ranges = _parse_ranges(cp.get("experiment", "reference_ranges"))

    return ExperimentConfig(
        name=name,
        network=network,
        training=training,
        target=target,
        target_expressions=target_exprs,
        equivalence=_get(cp, "experiment", "equivalence", str, default="numeric"),
        tolerance=_get(cp, "experiment", "tolerance", float, default=1e-6),
        trials=_get(cp, "experiment", "trials", int, default=10),
        extended=_get(cp, "experiment", "extended", bool, default=False),
        reference_expression=reference_expr,
        reference_ranges=reference_ranges,
        idx_images=idx_images,
        idx_labels=idx_labels,
        classes=classes,
        test_fraction=test_fraction,
    )


# ---------------------------------------------------------------------------
# correctness checks


def _check_explicit(exp: ExperimentConfig, network, exprs) -> bool:
    pts = sample_domain(exp.target.input_ranges, EQ_POINTS, seed=0)
    want = exp.target.fn(pts)
    exact = exp.equivalence == "exact"
    tol = 0.0 if exact else exp.tolerance
    for j, expr in enumerate(exprs):
        got = evaluate_tree_batch(expr, pts)
        if exact:
            if not (np.isfinite(got).all() and np.array_equal(got, want[:, j])):
                return False
        elif not values_equivalent(got, want[:, j], tol):
            return False
    return True


def _check_recurrent(exp: ExperimentConfig, network, exprs):
    """Returns (correct, identified_depth)."""
    pts = sample_domain(exp.target.input_ranges, EQ_POINTS, seed=0)
    target_vals = pts
    for _ in range(exp.target.target_depth):
        target_vals = exp.target.fn(target_vals)
    dag = most_likely_dag(network)
    depth_outputs = evaluate_recurrent(
        network, dag, pts, exp.training.recurrence_depth
    )
    for d, got in enumerate(depth_outputs, start=1):
        if all(
            values_equivalent(got[:, j], target_vals[:, j], exp.tolerance)
            for j in range(got.shape[1])
        ):
            return True, d
    return False, None


def _check_implicit(exp: ExperimentConfig, exprs):
    """Returns (correct, trapped): trap = expression uses no inputs."""
    trapped = all(not input_indices(e) for e in exprs)
    correct = False
    if exp.reference_expression is not None and exp.reference_ranges:
        pts = sample_domain(exp.reference_ranges, EQ_POINTS, seed=0)
        want = evaluate_tree_batch(exp.reference_expression, pts)
        correct = all(
            values_equivalent(evaluate_tree_batch(e, pts), want, exp.tolerance)
            for e in exprs
        )
    return correct, trapped


# ---------------------------------------------------------------------------
# trials


def _load_classification(exp: ExperimentConfig):
    dataset = load_idx(exp.idx_images, exp.idx_labels, exp.classes)
    rng = derive_rng(exp.training.seed, SPLIT_STREAM)
    return split(dataset, exp.test_fraction, rng)


def run_trial(exp: ExperimentConfig, trial: int, out_dir: Path | None = None,
              write_logs: bool = False, class_split=None) -> dict:
    """One seeded training run; returns the report row."""
    trial_seed = derive_seed(exp.training.seed, TRIAL_STREAM, trial)
    training = replace(exp.training, seed=trial_seed)
    network = build_network(exp.network)

    if exp.target.kind == "classification":
        train_set, test_set = class_split if class_split else _load_classification(exp)
        data = DatasetSource(train_set, training.batch_size, trial_seed)
    else:
        data = exp.target

    logger = None
    if write_logs and out_dir is not None:
        logger = CsvTrainLogger(out_dir / f"trial_{trial}_log.csv", network)
    try:
        run = train(network, data, training, logger=logger)
    finally:
        if logger is not None:
            logger.close()

    dag = most_likely_dag(network)
    exprs = [
        simplify(dag_to_expression(network, dag, j))
        for j in range(exp.network.output_count)
    ]
    row = {
        "trial": trial,
        "seed": trial_seed,
        "verdict": run.verdict,
        "epochs": run.converged_epoch if run.converged_epoch else run.epoch,
        "equivalent": "",
        "depth": "",
        "accuracy": "",
        "trapped": "",
        "expression": " | ".join(to_string(e) for e in exprs),
    }
    kind = exp.target.kind
    if kind == "classification":
        row["accuracy"] = classification_accuracy(network, dag, test_set)
    elif kind == "recurrent":
        ok, depth = _check_recurrent(exp, network, exprs)
        row["equivalent"] = ok
        row["depth"] = depth if depth is not None else ""
    elif kind == "implicit":
        ok, trapped = _check_implicit(exp, exprs)
        row["equivalent"] = ok
        row["trapped"] = trapped
    elif exp.equivalence != "none":
        row["equivalent"] = _check_explicit(exp, network, exprs)
    if out_dir is not None:
        save_network(network, out_dir / f"trial_{trial}_weights.txt")
    return row


def _trial_job(args):
    config_path, trial, overrides = args
    exp = _apply_overrides(parse_config(config_path), overrides)
    return run_trial(exp, trial)


def _apply_overrides(exp: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    if not overrides:
        return exp
    training = exp.training
    if overrides.get("seed") is not None:
        training = replace(training, seed=overrides["seed"])
    if overrides.get("max_epochs") is not None:
        training = replace(training, max_epochs=overrides["max_epochs"])
    exp = replace(exp, training=training)
    if overrides.get("trials") is not None:
        exp = replace(exp, trials=overrides["trials"])
    return exp


def summarize(name: str, rows: list[dict], trials: int) -> dict:
    converged = [r for r in rows if r["verdict"] == VERDICT_CONVERGED]
    correct = [r for r in converged if r["equivalent"] is True]
    eta = len(correct) / trials if trials else 0.0
    median_tc = (
        statistics.median(r["epochs"] for r in converged) if converged else None
    )
    summary = {
        "name": name,
        "trials": trials,
        "eta": eta,
        "median_convergence_epochs": median_tc,
    }
    accuracies = [r["accuracy"] for r in rows if r["accuracy"] != ""]
    if accuracies:
        summary["median_accuracy"] = statistics.median(accuracies)
    return summary


def run_experiment(
    config_path,
    out_dir=None,
    overrides: dict | None = None,
    workers: int = 1,
    write_logs: bool = False,
    echo=lambda *_: None,
) -> dict:
    """Run every trial of one benchmark and return the report dict."""
    exp = _apply_overrides(parse_config(config_path), overrides or {})
    out = Path(out_dir) if out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows = []
    if workers > 1 and exp.target.kind != "classification":
        jobs = [(str(config_path), t, overrides or {}) for t in range(exp.trials)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_trial_job, jobs))
    else:
        class_split = None
        if exp.target.kind == "classification":
            class_split = _load_classification(exp)
        for t in range(exp.trials):
            row = run_trial(exp, t, out_dir=out, write_logs=write_logs,
                            class_split=class_split)
            rows.append(row)
            echo(
                f"  trial {t}: {row['verdict']} after {row['epochs']} epochs"
                + (f", equivalent={row['equivalent']}" if row["equivalent"] != "" else "")
                + (f", accuracy={row['accuracy']:.4f}" if row["accuracy"] != "" else "")
            )

    summary = summarize(exp.name, rows, exp.trials)
    report = dict(summary)
    report["trial_rows"] = rows
    if out is not None:
        _write_report(out, exp.name, rows, summary)
    return report


def _write_report(out: Path, name: str, rows: list[dict], summary: dict) -> None:
    columns = [
        "trial", "seed", "verdict", "epochs", "equivalent", "depth",
        "accuracy", "trapped", "expression",
    ]
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})
    payload = dict(summary)
    payload["trials_detail"] = rows
    payload["generated_at"] = datetime.now(timezone.utc).isoformat()
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# verbs


def cmd_run(args) -> int:
    overrides = {
        "seed": args.seed,
        "trials": args.trials,
        "max_epochs": args.max_epochs,
    }
    print(f"running {args.config}")
    report = run_experiment(
        args.config,
        out_dir=args.out,
        overrides=overrides,
        workers=args.parallel_trials or 1,
        write_logs=not args.no_logs,
        echo=print,
    )
    eta = report["eta"]
    tc = report["median_convergence_epochs"]
    print(f"name={report['name']} eta={eta:.2f} median_Tc={tc}")
    if "median_accuracy" in report:
        print(f"median_accuracy={report['median_accuracy']:.4f}")
    return 0


def cmd_bench(args) -> int:
    config_dir = Path(args.config_dir)
    paths = sorted(config_dir.glob("*.ini"))
    if not paths:
        raise ConfigError(f"no .ini configs under {config_dir}")
    summaries = []
    for path in paths:
        exp = parse_config(path)
        if exp.extended and not args.extended:
            print(f"skipping {exp.name} (extended; rerun with --extended)")
            continue
        print(f"running {exp.name} ({exp.trials} trials)")
        out = Path(args.out) / exp.name if args.out else None
        overrides = {"seed": args.seed, "trials": args.trials,
                     "max_epochs": args.max_epochs}
        report = run_experiment(
            path, out_dir=out, overrides=overrides,
            workers=args.parallel_trials or 1, echo=print,
        )
        summaries.append(report)
    print(f"{'benchmark':<28} {'eta':>6} {'median_Tc':>10} {'accuracy':>9}")
    for s in summaries:
        acc = f"{s['median_accuracy']:.3f}" if "median_accuracy" in s else "-"
        tc = s["median_convergence_epochs"]
        print(f"{s['name']:<28} {s['eta']:>6.2f} {str(tc):>10} {acc:>9}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "benchmarks.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["name", "trials", "eta", "median_Tc", "median_accuracy"])
            for s in summaries:
                writer.writerow([
                    s["name"], s["trials"], s["eta"],
                    s["median_convergence_epochs"], s.get("median_accuracy", ""),
                ])
    return 0


def cmd_extract(args) -> int:
    network = load_network(args.weights)
    dag = most_likely_dag(network)
    for j in range(network.config.output_count):
        expr = simplify(dag_to_expression(network, dag, j))
        print(f"y{j} = {to_string(expr)}")
    return 0


def cmd_gen_data(args) -> int:
    exp = parse_config(args.config)
    if exp.target.kind == "classification":
        raise ConfigError("gen-data does not apply to classification targets")
    base_seed = args.seed if args.seed is not None else exp.training.seed
    rng = derive_rng(base_seed, DATA_STREAM, 0)
    ds = generate(exp.target, args.count, rng)
    out = Path(args.out) if args.out else Path(f"{exp.name}_data.csv")
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        u = ds.inputs.shape[1]
        v = ds.targets.shape[1]
        writer.writerow([f"x{i}" for i in range(u)] + [f"y{j}" for j in range(v)])
        for xi, yi in zip(ds.inputs, ds.targets):
            writer.writerow([repr(float(x)) for x in xi] + [repr(float(y)) for y in yi])
    print(f"wrote {len(ds)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softdag",
        description="Symbolic regression by sampling function graphs from a "
        "layered softmax network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="base seed override")
        p.add_argument("--trials", type=int, default=None, help="trial count override")
        p.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument(
            "--threads", "--parallel-trials", type=int, default=None,
            dest="parallel_trials", help="run trials in parallel worker processes",
        )

    p_run = sub.add_parser("run", help="run one benchmark config")
    p_run.add_argument("config")
    p_run.add_argument("--no-logs", action="store_true", help="skip per-epoch CSV logs")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="run every config in a directory")
    p_bench.add_argument("config_dir")
    p_bench.add_argument("--extended", action="store_true",
                         help="include long-running experiments")
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_extract = sub.add_parser("extract", help="print expressions from saved weights")
    p_extract.add_argument("weights")
    p_extract.set_defaults(func=cmd_extract)

    p_gen = sub.add_parser("gen-data", help="write a generated dataset as CSV")
    p_gen.add_argument("config")
    p_gen.add_argument("--count", type=int, default=1000)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", type=str, default=None)
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, WeightsFormatError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - report and signal runtime failure
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
