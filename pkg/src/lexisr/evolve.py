"""Evolutionary loop: variation, survival, logging, final-model choice.

Each generation draws an optional batch from the fit partition, refits the
population on it, builds the per-case error matrix, selects parents with
the configured lexicase strategy, breeds one offspring per parent slot
(crossover with probability ``cross_rate``, otherwise mutation), fits and
weight-optimizes the offspring, then applies the survival rule. The
validation partition only feeds the logs and the final-model choice.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr, model
from .data import Dataset, make_batch, validation_split
from .expr import ExprTree
from .model import Individual, RidgeConfig
from .selection import ErrorMatrix, SelectionStats, SelectionStrategy, select_parents

VALIDATION_FRACTION = 0.25
GENERATION_CSV_SCHEMA = "generation-log-v1"
GENERATION_CSV_HEADER = "generation,min_validation_loss,min_fit_loss,median_cases_used,wall_time_ms"


class SurvivalMode(enum.Enum):
    NSGA2 = "nsga2"
    OFFSPRING_REPLACEMENT = "offspring"


@dataclass(frozen=True)
class EvolutionConfig:
    pop_size: int = 100
    generations: int = 100
    cross_rate: float = 0.5
    max_depth: int = 6
    max_dimensions: int = 5
    backprop_iters: int = 10
    batch_size: int | None = 200
    survival_mode: SurvivalMode = SurvivalMode.NSGA2
    strategy: SelectionStrategy = SelectionStrategy.MAD_SEMI_DYNAMIC
    seed: int = 0
    ridge: RidgeConfig = RidgeConfig()

    def __post_init__(self) -> None:
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0.0 <= self.cross_rate <= 1.0:
            raise ValueError("cross_rate must lie in [0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_dimensions < 1:
            raise ValueError("max_dimensions must be >= 1")
        if self.backprop_iters < 0:
            raise ValueError("backprop_iters must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None for unlimited")


@dataclass(frozen=True)
class GenerationLog:
    generation: int
    min_validation_loss: float
    min_fit_loss: float
    median_cases_used: float
    wall_time_ms: int


# ---------------------------------------------------------------------------
# Variation


def crossover(
    p1: Individual, p2: Individual, rng: np.random.Generator, max_depth: int
) -> Individual:
    """Subtree crossover or whole-feature swap, with equal probability.

    Subtree crossover grafts a uniformly chosen subtree of ``p2`` onto a
    uniformly chosen position in a copy of ``p1``; grafts that would
    exceed ``max_depth`` are redrawn up to 8 times, after which the plain
    copy of ``p1`` is returned. The child is unfitted.
    """
    trees = list(p1.features)
    if rng.random() < 0.5:
        positions = [
            (ti, path) for ti, t in enumerate(trees) for path, _ in expr.iter_nodes(t)
        ]
        donors = [nd for t in p2.features for _, nd in expr.iter_nodes(t)]
        for _ in range(8):
            ti, path = positions[int(rng.integers(len(positions)))]
            donor = donors[int(rng.integers(len(donors)))]
            candidate = expr.replace_node(trees[ti], path, donor)
            if expr.depth(candidate) <= max_depth:
                trees[ti] = candidate
                break
    else:
        i = int(rng.integers(len(trees)))
        j = int(rng.integers(len(p2.features)))
        trees[i] = p2.features[j]
    return p1.spawn(trees)


def _point_mutation(
    trees: list[ExprTree], rng: np.random.Generator, n_features: int
) -> None:
    ti = int(rng.integers(len(trees)))
    paths = [p for p, _ in expr.iter_nodes(trees[ti])]
    path = paths[int(rng.integers(len(paths)))]
    old = expr.get_node(trees[ti], path)
    if old.is_leaf:
        new = expr.random_leaf(n_features, rng)
    elif len(old.children) == 1:
        op = expr.UNARY_OPS[int(rng.integers(len(expr.UNARY_OPS)))]
        new = ExprTree(op, old.children, old.weights)
    else:
        op = expr.BINARY_OPS[int(rng.integers(len(expr.BINARY_OPS)))]
        new = ExprTree(op, old.children, old.weights)
    trees[ti] = expr.replace_node(trees[ti], path, new)


def _insert_mutation(
    trees: list[ExprTree], rng: np.random.Generator, max_depth: int, n_features: int
) -> bool:
    """Wrap a node with a random unary/binary operator; a binary wrapper
    gets a fresh random tree as its other argument. Returns False when no
    position can take a wrapper without breaking the depth cap."""
    ti = int(rng.integers(len(trees)))
    valid = [
        (path, nd)
        for path, nd in expr.iter_nodes(trees[ti])
        if len(path) + 1 + expr.depth(nd) <= max_depth
    ]
    if not valid:
        return False
    path, old = valid[int(rng.integers(len(valid)))]
    op = expr.FUNCTION_OPS[int(rng.integers(len(expr.FUNCTION_OPS)))]
    if expr.arity(op) == 1:
        new = ExprTree(op, (old,), (1.0,))
    else:
        budget = max_depth - (len(path) + 1)
        extra = expr.random_tree(max(1, budget), n_features, rng)
        if rng.random() < 0.5:
            new = ExprTree(op, (old, extra), (1.0, 1.0))
        else:
            new = ExprTree(op, (extra, old), (1.0, 1.0))
    trees[ti] = expr.replace_node(trees[ti], path, new)
    return True


def _delete_mutation(
    trees: list[ExprTree], rng: np.random.Generator, n_features: int
) -> None:
    ti = int(rng.integers(len(trees)))
    paths = [p for p, _ in expr.iter_nodes(trees[ti])]
    path = paths[int(rng.integers(len(paths)))]
    old = expr.get_node(trees[ti], path)
    if old.is_leaf:
        new = expr.random_leaf(n_features, rng)
    else:
        new = old.children[int(rng.integers(len(old.children)))]
    trees[ti] = expr.replace_node(trees[ti], path, new)


def mutate(
    ind: Individual,
    rng: np.random.Generator,
    max_depth: int,
    max_dimensions: int,
    n_features: int,
) -> Individual:
    """One of five mutations chosen uniformly among those the dimension
    cap allows: point, insert, delete, insert-dimension, delete-dimension.
    An insert with no depth-safe position falls back to a point mutation.
    The child is unfitted."""
    kinds = ["point", "insert", "delete"]
    if len(ind.features) < max_dimensions:
        kinds.append("insert-dim")
    if len(ind.features) > 1:
        kinds.append("delete-dim")
    kind = kinds[int(rng.integers(len(kinds)))]
    trees = list(ind.features)
    if kind == "insert":
        if not _insert_mutation(trees, rng, max_depth, n_features):
            kind = "point"
    if kind == "point":
        _point_mutation(trees, rng, n_features)
    elif kind == "delete":
        _delete_mutation(trees, rng, n_features)
    elif kind == "insert-dim":
        trees.append(expr.random_tree(max_depth, n_features, rng))
    elif kind == "delete-dim":
        trees.pop(int(rng.integers(len(trees))))
    return ind.spawn(trees)


# ---------------------------------------------------------------------------
# Survival


def _dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def _nondominated_fronts(objectives: list[tuple[float, float]]) -> list[list[int]]:
    """Fast non-dominated sort; fronts and their members in index order."""
    n = len(objectives)
    dominated: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    first: list[int] = []
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if _dominates(objectives[p], objectives[q]):
                dominated[p].append(q)
            elif _dominates(objectives[q], objectives[p]):
                counts[p] += 1
        if counts[p] == 0:
            first.append(p)
    fronts = [first]
    while fronts[-1]:
        nxt: list[int] = []
        for p in fronts[-1]:
            for q in dominated[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        fronts.append(sorted(nxt))
    fronts.pop()
    return fronts


def _crowding_distances(
    objectives: list[tuple[float, float]], front: list[int]
) -> dict[int, float]:
    dist = {i: 0.0 for i in front}
    for m in range(2):
        order = sorted(front, key=lambda i: (objectives[i][m], i))
        dist[order[0]] = float("inf")
        dist[order[-1]] = float("inf")
        vmin = objectives[order[0]][m]
        vmax = objectives[order[-1]][m]
        if vmax == vmin:
            continue
        for k in range(1, len(order) - 1):
            gap = objectives[order[k + 1]][m] - objectives[order[k - 1]][m]
            dist[order[k]] += gap / (vmax - vmin)
    return dist


def nsga2_survive(candidates: list[Individual], capacity: int) -> list[Individual]:
    """Truncate to ``capacity`` by non-domination rank on (fitness,
    complexity), both minimized; the splitting front is cut by descending
    crowding distance with ties broken by candidate index."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if len(candidates) < capacity:
        raise ValueError(f"{len(candidates)} candidates cannot fill capacity {capacity}")
    objectives = [(float(ind.fitness), float(ind.complexity)) for ind in candidates]
    survivors: list[int] = []
    for front in _nondominated_fronts(objectives):
        if len(survivors) + len(front) <= capacity:
            survivors.extend(front)
            if len(survivors) == capacity:
                break
        else:
            dist = _crowding_distances(objectives, front)
            ranked = sorted(front, key=lambda i: (-dist[i], i))
            survivors.extend(ranked[: capacity - len(survivors)])
            break
    return [candidates[i] for i in survivors]


# ---------------------------------------------------------------------------
# The loop


def _initial_population(
    config: EvolutionConfig, n_features: int, rng: np.random.Generator
) -> list[Individual]:
    pop = []
    for i in range(config.pop_size):
        ramp_depth = 1 + (i % config.max_depth)
        dims = int(rng.integers(1, min(3, config.max_dimensions) + 1))
        trees = [expr.random_tree(ramp_depth, n_features, rng) for _ in range(dims)]
        pop.append(model.new_individual(trees))
    return pop


def run(
    config: EvolutionConfig,
    train: Dataset,
    selection_stats: list[tuple[int, SelectionStats]] | None = None,
) -> tuple[Individual, list[GenerationLog]]:
    """Evolve on ``train`` and return the individual with the lowest
    validation MSE in the final population plus the per-generation log.

    When ``selection_stats`` is given, one ``(generation, SelectionStats)``
    pair is appended per generation.
    """
    root = np.random.SeedSequence(config.seed)
    split_ss, init_ss, loop_ss = root.spawn(3)
    pair = validation_split(train, VALIDATION_FRACTION, int(split_ss.generate_state(1)[0]))
    fit_data, val_data = pair.first, pair.second

    rng_init = np.random.default_rng(init_ss)
    pop = _initial_population(config, train.n_features, rng_init)
    for ind in pop:
        model.fit_individual(ind, fit_data, config.ridge)

    rng = np.random.default_rng(loop_ss)
    logs: list[GenerationLog] = []
    for g in range(1, config.generations + 1):
        t0 = time.perf_counter_ns()
        if config.batch_size is not None and config.batch_size < fit_data.n_samples:
            batch = make_batch(fit_data, config.batch_size, rng)
        else:
            batch = fit_data
        for ind in pop:
            model.fit_individual(ind, batch, config.ridge)
        errmat = ErrorMatrix(np.vstack([ind.case_errors_cache for ind in pop]))
        parent_idx, stats = select_parents(errmat, config.pop_size, config.strategy, rng)

        offspring: list[Individual] = []
        for slot in range(config.pop_size):
            p1 = pop[parent_idx[slot]]
            if rng.random() < config.cross_rate:
                p2 = pop[parent_idx[int(rng.integers(config.pop_size))]]
                child = crossover(p1, p2, rng, config.max_depth)
            else:
                child = mutate(
                    p1, rng, config.max_depth, config.max_dimensions, train.n_features
                )
            model.fit_individual(child, batch, config.ridge)
            if config.backprop_iters > 0:
                model.optimize_weights(
                    child, batch, config.backprop_iters, cfg=config.ridge
                )
            offspring.append(child)

        if config.survival_mode is SurvivalMode.NSGA2:
            pop = nsga2_survive(pop + offspring, config.pop_size)
        else:
            pop = offspring

        val_losses = [
            model.mse(model.predict(ind, val_data.features), val_data.targets)
            for ind in pop
        ]
        wall_ms = (time.perf_counter_ns() - t0) // 1_000_000
        logs.append(
            GenerationLog(
                generation=g,
                min_validation_loss=min(val_losses),
                min_fit_loss=min(ind.fitness for ind in pop),
                median_cases_used=stats.median_cases_used,
                wall_time_ms=int(wall_ms),
            )
        )
        if selection_stats is not None:
            selection_stats.append((g, stats))

    final_val = [
        model.mse(model.predict(ind, val_data.features), val_data.targets) for ind in pop
    ]
    return pop[int(np.argmin(final_val))], logs


# ---------------------------------------------------------------------------
# Serialization


def generation_csv_lines(logs: list[GenerationLog]) -> list[str]:
    lines = [f"# schema={GENERATION_CSV_SCHEMA}", GENERATION_CSV_HEADER]
    for lg in logs:
        lines.append(
            f"{lg.generation},{lg.min_validation_loss!r},{lg.min_fit_loss!r},"
            f"{lg.median_cases_used!r},{lg.wall_time_ms}"
        )
    return lines


def write_generation_csv(logs: list[GenerationLog], path: str | Path) -> None:
    Path(path).write_text("\n".join(generation_csv_lines(logs)) + "\n")


def config_echo(config: EvolutionConfig) -> dict:
    return {
        "pop_size": config.pop_size,
        "generations": config.generations,
        "cross_rate": config.cross_rate,
        "max_depth": config.max_depth,
        "max_dimensions": config.max_dimensions,
        "backprop_iters": config.backprop_iters,
        "batch_size": config.batch_size,
        "survival_mode": config.survival_mode.value,
        "strategy": config.strategy.value,
        "seed": config.seed,
        "ridge_lambda": config.ridge.regularization_strength,
    }
