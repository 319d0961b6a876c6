"""Experiment harness: single runs, strategy comparisons, scaling sweeps.

Every output file starts with a ``# schema=...`` line. Outputs are
re-creatable byte-for-byte from the spec and seeds, wall-time columns
excluded. The ``LEXISR_WORKERS`` environment variable sets how many runs
execute in parallel; results do not depend on it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evolve, model, selection
from .data import (
    Dataset,
    DatasetError,
    friedman1_target,
    load_csv,
    synth_friedman1,
    train_test_split,
)
from .evolve import EvolutionConfig, GenerationLog, SurvivalMode
from .model import RidgeConfig
from .selection import SelectionStats, SelectionStrategy

WORKERS_ENV = "LEXISR_WORKERS"
TEST_FRACTION = 0.25

SELECTION_CSV_SCHEMA = "selection-stats-v1"
SUMMARY_SCHEMA = "run-summary-v1"
CONVERGENCE_SCHEMA = "compare-convergence-v1"
CASES_USED_SCHEMA = "compare-cases-used-v1"
FINAL_SCORES_SCHEMA = "compare-final-scores-v1"
SCALING_SCHEMA = "scaling-v1"
SCALING_CSV_HEADER = "strategy,n_samples,n_features,wall_time_ms"

# Short-evolution settings for scaling sweeps.
SCALING_GENERATIONS = 3
SCALING_POP_SIZE = 50
SCALING_MAX_DEPTH = 3
SCALING_NOISE_SD = 0.1


class ConfigError(ValueError):
    """Bad experiment configuration; the message names the field."""


@dataclass
class ExperimentSpec:
    dataset: str
    strategies: list[SelectionStrategy]
    seeds: list[int]
    out_dir: Path
    target_column: str = "target"
    test_fraction: float = TEST_FRACTION
    overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ConfigError("field 'strategy': at least one strategy is required")
        if not self.seeds:
            raise ConfigError("field 'seed': at least one seed is required")
        self.out_dir = Path(self.out_dir)


def parse_strategy(token: str) -> SelectionStrategy:
    try:
        return SelectionStrategy(token)
    except ValueError:
        choices = ", ".join(s.value for s in SelectionStrategy)
        raise ConfigError(
            f"field 'strategy': unknown strategy {token!r} (choose from {choices})"
        ) from None


def parse_dataset_spec(spec: str, target_column: str) -> tuple[str, Dataset]:
    """Resolve a dataset reference to (stem, Dataset).

    Either a CSV path or ``friedman1:n=500,noise=0.1[,seed=0]``.
    """
    if spec.startswith("friedman1"):
        params = {"n": 500, "noise": 0.0, "seed": 0}
        _, _, tail = spec.partition(":")
        if tail:
            for item in tail.split(","):
                key, _, raw = item.partition("=")
                key = key.strip()
                if key not in params:
                    raise ConfigError(
                        f"field 'dataset': unknown friedman1 parameter {key!r}"
                    )
                try:
                    params[key] = float(raw) if key == "noise" else int(raw)
                except ValueError:
                    raise ConfigError(
                        f"field 'dataset': bad value {raw!r} for {key!r}"
                    ) from None
        ds = synth_friedman1(params["n"], params["noise"], params["seed"])
        return "friedman1", ds
    path = Path(spec)
    return path.stem, load_csv(path, target_column)


def dataset_id(stem: str, ds: Dataset) -> str:
    return f"{stem}-{ds.n_samples}x{ds.n_features}"


def build_config(
    strategy: SelectionStrategy, seed: int, overrides: dict
) -> EvolutionConfig:
    kwargs = dict(overrides)
    ridge_lambda = kwargs.pop("ridge_lambda", None)
    if ridge_lambda is not None:
        kwargs["ridge"] = RidgeConfig(float(ridge_lambda))
    try:
        return EvolutionConfig(strategy=strategy, seed=seed, **kwargs)
    except TypeError as err:
        raise ConfigError(f"field 'config': {err}") from None
    except ValueError as err:
        raise ConfigError(f"field 'config': {err}") from None


# ---------------------------------------------------------------------------
# Run execution


@dataclass
class RunResult:
    strategy: SelectionStrategy
    seed: int
    logs: list[GenerationLog]
    stats: list[tuple[int, SelectionStats]]
    summary: dict


def _execute_run(job: dict) -> RunResult:
    """Run one (strategy, seed) cell; importable so worker processes can
    pickle it. Resolves the dataset locally to keep job payloads small."""
    strategy = SelectionStrategy(job["strategy"])
    seed = job["seed"]
    stem, ds = parse_dataset_spec(job["dataset"], job["target_column"])
    split = train_test_split(ds, job["test_fraction"], seed)
    config = build_config(strategy, seed, job["overrides"])
    stats: list[tuple[int, SelectionStats]] = []
    t0 = time.perf_counter_ns()
    best, logs = evolve.run(config, split.first, selection_stats=stats)
    wall_ms = (time.perf_counter_ns() - t0) // 1_000_000
    y_hat = model.predict(best, split.second.features)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "dataset": dataset_id(stem, ds),
        "config": evolve.config_echo(config),
        "final_model": model.model_report(best, list(ds.feature_names)),
        "test_r2": model.r2(y_hat, split.second.targets),
        "test_mse": model.mse(y_hat, split.second.targets),
        "total_wall_time_ms": int(wall_ms),
    }
    return RunResult(strategy, seed, logs, stats, summary)


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"field '{WORKERS_ENV}': not an integer: {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"field '{WORKERS_ENV}': must be >= 1, got {workers}")
    return workers


def execute_spec(spec: ExperimentSpec) -> list[RunResult]:
    """All (strategy, seed) runs of the spec, in spec order. Runs execute
    in parallel when LEXISR_WORKERS > 1; results are identical either way
    because each run depends only on its own seed."""
    jobs = [
        {
            "dataset": spec.dataset,
            "target_column": spec.target_column,
            "test_fraction": spec.test_fraction,
            "strategy": strategy.value,
            "seed": seed,
            "overrides": spec.overrides,
        }
        for strategy in spec.strategies
        for seed in spec.seeds
    ]
    workers = _worker_count()
    if workers == 1 or len(jobs) == 1:
        return [_execute_run(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_execute_run, jobs))


def _run_stem(spec: ExperimentSpec, result: RunResult) -> str:
    stem, ds = parse_dataset_spec(spec.dataset, spec.target_column)
    return f"{dataset_id(stem, ds)}_{result.strategy.value}_{result.seed}"


def _write_run_artifacts(spec: ExperimentSpec, results: list[RunResult]) -> None:
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    for result in results:
        stem = _run_stem(spec, result)
        evolve.write_generation_csv(result.logs, spec.out_dir / f"{stem}_generations.csv")
        lines = [f"# schema={SELECTION_CSV_SCHEMA}", selection.STATS_CSV_HEADER]
        for generation, stats in result.stats:
            lines.append(selection.stats_csv_row(generation, result.strategy, stats))
        (spec.out_dir / f"{stem}_selection.csv").write_text("\n".join(lines) + "\n")
        (spec.out_dir / f"{stem}_summary.json").write_text(
            json.dumps(result.summary, indent=2, sort_keys=True) + "\n"
        )


def cmd_run(spec: ExperimentSpec) -> int:
    """One run per (strategy, seed): split 75/25, evolve on the training
    side, score the final model on the held-out side, write a generation
    CSV, a selection-stats CSV, and a JSON summary per run."""
    results = execute_spec(spec)
    _write_run_artifacts(spec, results)
    for result in results:
        print(
            f"{_run_stem(spec, result)}: test_r2={result.summary['test_r2']:.4f} "
            f"test_mse={result.summary['test_mse']:.4g}"
        )
    return 0


# ---------------------------------------------------------------------------
# Comparison suites


def _median_table(
    spec: ExperimentSpec,
    results: list[RunResult],
    value: "callable",
) -> list[str]:
    """generation x strategy table; cells are medians over seeds."""
    by_strategy: dict[SelectionStrategy, list[RunResult]] = {
        s: [r for r in results if r.strategy is s] for s in spec.strategies
    }
    n_gens = max((len(r.logs) for r in results), default=0)
    rows = []
    for g in range(1, n_gens + 1):
        cells = [str(g)]
        for strategy in spec.strategies:
            vals = [value(r.logs[g - 1]) for r in by_strategy[strategy] if len(r.logs) >= g]
            cells.append(repr(float(np.median(vals))))
        rows.append(",".join(cells))
    return rows


def cmd_compare(spec: ExperimentSpec) -> int:
    """Run the whole (strategy, seed) grid, write per-run artifacts, then
    aggregate into convergence, cases-used, and final-score tables."""
    results = execute_spec(spec)
    _write_run_artifacts(spec, results)

    header = "generation," + ",".join(s.value for s in spec.strategies)
    convergence = [f"# schema={CONVERGENCE_SCHEMA}", header]
    convergence += _median_table(spec, results, lambda lg: lg.min_validation_loss)
    (spec.out_dir / "convergence.csv").write_text("\n".join(convergence) + "\n")

    cases = [f"# schema={CASES_USED_SCHEMA}", header]
    cases += _median_table(spec, results, lambda lg: lg.median_cases_used)
    (spec.out_dir / "cases_used.csv").write_text("\n".join(cases) + "\n")

    scores = [
        f"# schema={FINAL_SCORES_SCHEMA}",
        "strategy,median_test_r2,median_complexity,median_size",
    ]
    for strategy in spec.strategies:
        group = [r for r in results if r.strategy is strategy]
        scores.append(
            ",".join(
                [
                    strategy.value,
                    repr(float(np.median([r.summary["test_r2"] for r in group]))),
                    repr(float(np.median([r.summary["final_model"]["complexity"] for r in group]))),
                    repr(float(np.median([r.summary["final_model"]["size"] for r in group]))),
                ]
            )
        )
    (spec.out_dir / "final_scores.csv").write_text("\n".join(scores) + "\n")
    print(f"wrote convergence.csv, cases_used.csv, final_scores.csv to {spec.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Scaling sweeps


def _scaling_dataset(n_samples: int, n_features: int, seed: int) -> Dataset:
    if n_features < 5:
        raise ConfigError("field 'features': scaling datasets need >= 5 features")
    rng = np.random.default_rng(seed)
    X = rng.random((n_samples, n_features))
    y = friedman1_target(X) + rng.normal(0.0, SCALING_NOISE_SD, n_samples)
    return Dataset(X, y, tuple(f"x{i}" for i in range(n_features)))


def _scaling_cell(job: dict) -> list[str]:
    strategy = SelectionStrategy(job["strategy"])
    ds = _scaling_dataset(job["n_samples"], job["n_features"], job["seed"])
    split = train_test_split(ds, TEST_FRACTION, job["seed"])
    config = EvolutionConfig(
        pop_size=job["pop_size"],
        generations=job["generations"],
        max_depth=SCALING_MAX_DEPTH,
        batch_size=None,
        strategy=strategy,
        seed=job["seed"],
    )
    rows = []
    for _ in range(job["repeats"]):
        t0 = time.perf_counter_ns()
        evolve.run(config, split.first)
        wall_ms = (time.perf_counter_ns() - t0) // 1_000_000
        rows.append(
            f"{strategy.value},{job['n_samples']},{job['n_features']},{int(wall_ms)}"
        )
    return rows


def cmd_scaling(
    strategies: list[SelectionStrategy],
    sample_sizes: list[int],
    feature_counts: list[int],
    seed: int,
    out_dir: Path,
    repeats: int = 1,
    generations: int = SCALING_GENERATIONS,
    pop_size: int = SCALING_POP_SIZE,
) -> int:
    """Short evolutions over a synthetic grid; wall time is measured
    around the evolution call only."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        {
            "strategy": strategy.value,
            "n_samples": n,
            "n_features": f,
            "seed": seed,
            "repeats": repeats,
            "generations": generations,
            "pop_size": pop_size,
        }
        for strategy in strategies
        for n in sample_sizes
        for f in feature_counts
    ]
    workers = _worker_count()
    if workers == 1 or len(jobs) == 1:
        groups = [_scaling_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            groups = list(pool.map(_scaling_cell, jobs))
    lines = [f"# schema={SCALING_SCHEMA}", SCALING_CSV_HEADER]
    for group in groups:
        lines.extend(group)
    (out_dir / "scaling.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote scaling.csv ({len(jobs)} grid cells x {repeats} repeats) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Configuration plumbing

_CONFIG_KEYS = {
    "dataset",
    "target",
    "strategies",
    "seeds",
    "out",
    "gens",
    "pop",
    "batch",
    "max_depth",
    "cross_rate",
    "survival",
    "backprop_iters",
    "max_dimensions",
    "ridge_lambda",
    "test_fraction",
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key=value format; '#' starts a comment, lists are
    comma-separated."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"field 'config': no such file: {path}")
    values: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"field 'config': {path}:{line_no}: expected key=value")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"field 'config': {path}:{line_no}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _parse_survival(token: str) -> SurvivalMode:
    try:
        return SurvivalMode(token)
    except ValueError:
        choices = ", ".join(m.value for m in SurvivalMode)
        raise ConfigError(
            f"field 'survival': unknown mode {token!r} (choose from {choices})"
        ) from None


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    cfg = parse_config_file(args.config) if args.config else {}

    def pick(flag_value, key: str, parse, default=None):
        if flag_value is not None:
            return flag_value
        if key in cfg:
            try:
                return parse(cfg[key])
            except (ValueError, TypeError):
                raise ConfigError(f"field {key!r}: bad value {cfg[key]!r}") from None
        return default

    dataset = pick(args.dataset, "dataset", str)
    if dataset is None:
        raise ConfigError("field 'dataset': required (flag --dataset or config key)")
    strategy_tokens = args.strategy or (
        [t.strip() for t in cfg["strategies"].split(",")] if "strategies" in cfg else []
    )
    strategies = [parse_strategy(t) for t in strategy_tokens]
    seeds = args.seed or (
        [int(t) for t in cfg["seeds"].split(",")] if "seeds" in cfg else []
    )
    out_dir = pick(args.out, "out", str)
    if out_dir is None:
        raise ConfigError("field 'out': required (flag --out or config key)")

    overrides: dict = {}
    gens = pick(args.gens, "gens", int)
    if gens is not None:
        overrides["generations"] = gens
    pop = pick(args.pop, "pop", int)
    if pop is not None:
        overrides["pop_size"] = pop
    batch = pick(args.batch, "batch", int)
    if batch is not None:
        overrides["batch_size"] = None if batch == 0 else batch
    for key, parse, name in [
        ("max_depth", int, "max_depth"),
        ("cross_rate", float, "cross_rate"),
        ("backprop_iters", int, "backprop_iters"),
        ("max_dimensions", int, "max_dimensions"),
        ("ridge_lambda", float, "ridge_lambda"),
    ]:
        value = pick(None, key, parse)
        if value is not None:
            overrides[name] = value
    if "survival" in cfg:
        overrides["survival_mode"] = _parse_survival(cfg["survival"])

    return ExperimentSpec(
        dataset=dataset,
        strategies=strategies,
        seeds=seeds,
        out_dir=Path(out_dir),
        target_column=pick(args.target, "target", str, "target"),
        test_fraction=pick(None, "test_fraction", float, TEST_FRACTION),
        overrides=overrides,
    )


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument(
        "--dataset", help="CSV path or friedman1:n=500,noise=0.1[,seed=0]"
    )
    parser.add_argument("--target", help="target column name for CSV datasets")
    parser.add_argument(
        "--strategy",
        action="append",
        help="selection strategy (repeatable): "
        + ", ".join(s.value for s in SelectionStrategy),
    )
    parser.add_argument("--seed", action="append", type=int, help="run seed (repeatable)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--gens", type=int, help="number of generations")
    parser.add_argument("--pop", type=int, help="population size")
    parser.add_argument("--batch", type=int, help="batch size; 0 for unlimited")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexisr",
        description="Symbolic-regression experiments with lexicase parent selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run each (strategy, seed) cell and write artifacts")
    _add_common_flags(run_p)

    cmp_p = sub.add_parser("compare", help="run the grid and aggregate comparison tables")
    _add_common_flags(cmp_p)

    sc_p = sub.add_parser("scaling", help="wall-time sweep over synthetic dataset sizes")
    sc_p.add_argument("--strategy", action="append", required=True)
    sc_p.add_argument(
        "--samples", required=True, help="comma-separated sample counts, e.g. 250,500,1000"
    )
    sc_p.add_argument(
        "--features", required=True, help="comma-separated feature counts, e.g. 5,10,25"
    )
    sc_p.add_argument("--seed", type=int, default=0)
    sc_p.add_argument("--out", required=True)
    sc_p.add_argument("--repeats", type=int, default=1)
    sc_p.add_argument("--gens", type=int, default=SCALING_GENERATIONS)
    sc_p.add_argument("--pop", type=int, default=SCALING_POP_SIZE)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_spec_from_args(args))
        if args.command == "compare":
            return cmd_compare(_spec_from_args(args))
        strategies = [parse_strategy(t) for t in args.strategy]
        try:
            sample_sizes = [int(t) for t in args.samples.split(",")]
            feature_counts = [int(t) for t in args.features.split(",")]
        except ValueError:
            raise ConfigError(
                "field 'samples'/'features': comma-separated integers expected"
            ) from None
        return cmd_scaling(
            strategies,
            sample_sizes,
            feature_counts,
            args.seed,
            Path(args.out),
            repeats=args.repeats,
            generations=args.gens,
            pop_size=args.pop,
        )
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, DatasetError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
