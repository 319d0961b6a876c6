"""Lexicase parent selection over a per-case error matrix.

One parent is chosen by sending the whole population into a pool and
visiting test cases in a uniform random order without replacement. Each
visited case shrinks the pool to the members passing that case's
criterion; selection stops when one member remains or the cases run out
(then a uniform random pool member is returned).

Five criteria are implemented. Three use a tolerance around the best
(elite) error, with the tolerance set to the median absolute deviation
(MAD) of the case's errors:

* ``MAD_STATIC``        keep e <= global_min + MAD(whole population column);
                        both terms are population-level, so the pass/fail
                        decision is a precomputable binary mask
* ``MAD_SEMI_DYNAMIC``  keep e <= pool_min + MAD(whole population column)
* ``MAD_DYNAMIC``       keep e <= pool_min + MAD(current pool column)

Two use an absolute threshold that splits the errors into a low cluster
and a high cluster minimizing Var(low)/|low| + Var(high)/|high|; survivors
are the low cluster (strict ``e < tau``):

* ``MVT_STATIC``        tau from the whole population column, precomputed
                        once per error matrix
* ``MVT_DYNAMIC``       tau recomputed from the current pool at every step

When a threshold does not exist (all pool errors equal) every member
survives. The pool never empties: if no member passes a case's criterion
(possible only for the two static rules, whose thresholds ignore the
current pool) the case is consumed and the pool is left unchanged, which
on discrete errors reproduces plain lexicase's behavior for tied cases.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

STATS_CSV_HEADER = "generation,strategy,median_cases_used,mean_cases_used,max_cases_used"


class SelectionStrategy(enum.Enum):
    MAD_STATIC = "mad-static"
    MAD_SEMI_DYNAMIC = "mad-semi-dynamic"
    MAD_DYNAMIC = "mad-dynamic"
    MVT_STATIC = "mvt-static"
    MVT_DYNAMIC = "mvt-dynamic"


@dataclass(frozen=True)
class ErrorMatrix:
    """N individuals x T cases of non-negative, finite absolute errors."""

    errors: np.ndarray

    def __post_init__(self) -> None:
        errors = np.asarray(self.errors, dtype=float)
        if errors.ndim != 2 or errors.shape[0] < 1 or errors.shape[1] < 1:
            raise ValueError("errors must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(errors)):
            raise ValueError("error matrix contains non-finite values")
        if np.any(errors < 0):
            raise ValueError("error matrix contains negative values")
        errors.setflags(write=False)
        object.__setattr__(self, "errors", errors)

    @property
    def n_individuals(self) -> int:
        return self.errors.shape[0]

    @property
    def n_cases(self) -> int:
        return self.errors.shape[1]


@dataclass
class SelectionStats:
    """Per-parent bookkeeping: cases consumed, optional pool-size traces."""

    cases_used: list[int] = field(default_factory=list)
    pool_trajectory: list[list[int]] | None = None

    def record(self, used: int, trajectory: list[int] | None = None) -> None:
        self.cases_used.append(used)
        if trajectory is not None:
            if self.pool_trajectory is None:
                self.pool_trajectory = []
            self.pool_trajectory.append(trajectory)

    @property
    def median_cases_used(self) -> float:
        return float(np.median(self.cases_used)) if self.cases_used else 0.0

    @property
    def mean_cases_used(self) -> float:
        return float(np.mean(self.cases_used)) if self.cases_used else 0.0

    @property
    def max_cases_used(self) -> int:
        return int(max(self.cases_used)) if self.cases_used else 0


def stats_csv_row(generation: int, strategy: SelectionStrategy, stats: SelectionStats) -> str:
    return ",".join(
        [
            str(generation),
            strategy.value,
            repr(stats.median_cases_used),
            repr(stats.mean_cases_used),
            str(stats.max_cases_used),
        ]
    )


def mad(v: np.ndarray) -> float:
    """Median absolute deviation: median(|v - median(v)|). The median of an
    even-length vector is the mean of the two central order statistics."""
    v = np.asarray(v, dtype=float)
    if v.size < 1:
        raise ValueError("mad needs at least one value")
    return float(np.median(np.abs(v - np.median(v))))


def mvt_threshold(v: np.ndarray) -> float | None:
    """Threshold splitting ``v`` into low/high partitions with minimum
    Var(low)/|low| + Var(high)/|high| (population variance).

    Candidates are the midpoints between consecutive distinct sorted
    values, so low and high are always non-empty; ties break toward the
    smallest threshold. Returns None when all values are equal.
    """
    v = np.asarray(v, dtype=float)
    if v.size < 1:
        raise ValueError("mvt_threshold needs at least one value")
    s = np.sort(v)
    n = s.size
    if s[0] == s[-1]:
        return None
    boundaries = np.nonzero(s[:-1] < s[1:])[0]  # split after index i
    c1 = np.cumsum(s)
    c2 = np.cumsum(s * s)
    n_left = boundaries + 1.0
    n_right = n - n_left
    mean_left = c1[boundaries] / n_left
    mean_right = (c1[-1] - c1[boundaries]) / n_right
    var_left = np.maximum(c2[boundaries] / n_left - mean_left**2, 0.0)
    var_right = np.maximum((c2[-1] - c2[boundaries]) / n_right - mean_right**2, 0.0)
    objective = var_left / n_left + var_right / n_right
    best = int(np.argmin(objective))  # first minimum = smallest threshold
    i = int(boundaries[best])
    return float((s[i] + s[i + 1]) / 2.0)


@dataclass
class StrategyContext:
    """Population-level quantities a strategy reuses across selections.

    For one error matrix this is computed once (per generation in the
    evolutionary loop) and shared by every parent drawn from it.
    """

    strategy: SelectionStrategy
    pass_mask: np.ndarray | None = None      # MAD_STATIC: N x T bools
    column_mads: np.ndarray | None = None    # MAD_SEMI_DYNAMIC: length T
    thresholds: np.ndarray | None = None     # MVT_STATIC: length T, NaN = absent


def prepare_strategy(errors: ErrorMatrix, strategy: SelectionStrategy) -> StrategyContext:
    E = errors.errors
    ctx = StrategyContext(strategy)
    if strategy is SelectionStrategy.MAD_STATIC:
        mads = np.median(np.abs(E - np.median(E, axis=0)), axis=0)
        ctx.pass_mask = E <= E.min(axis=0) + mads
    elif strategy is SelectionStrategy.MAD_SEMI_DYNAMIC:
        ctx.column_mads = np.median(np.abs(E - np.median(E, axis=0)), axis=0)
    elif strategy is SelectionStrategy.MVT_STATIC:
        taus = np.empty(E.shape[1])
        for t in range(E.shape[1]):
            tau = mvt_threshold(E[:, t])
            taus[t] = np.nan if tau is None else tau
        ctx.thresholds = taus
    return ctx


def select_parent(
    errors: ErrorMatrix,
    strategy: SelectionStrategy,
    rng: np.random.Generator,
    stats: SelectionStats,
    context: StrategyContext | None = None,
    record_trajectory: bool = False,
) -> int:
    """Run one selection event and return the chosen individual's index."""
    if context is None or context.strategy is not strategy:
        context = prepare_strategy(errors, strategy)
    E = errors.errors
    pool = np.arange(E.shape[0])
    order = rng.permutation(E.shape[1])
    used = 0
    trajectory: list[int] | None = [] if record_trajectory else None
    for t in order:
        if pool.size == 1:
            break
        col = E[pool, t]
        if strategy is SelectionStrategy.MAD_STATIC:
            keep = context.pass_mask[pool, t]
        elif strategy is SelectionStrategy.MAD_SEMI_DYNAMIC:
            keep = col <= col.min() + context.column_mads[t]
        elif strategy is SelectionStrategy.MAD_DYNAMIC:
            keep = col <= col.min() + mad(col)
        elif strategy is SelectionStrategy.MVT_STATIC:
            tau = context.thresholds[t]
            keep = None if np.isnan(tau) else col < tau
        else:  # MVT_DYNAMIC
            tau = mvt_threshold(col)
            keep = None if tau is None else col < tau
        used += 1
        if keep is not None and keep.any():
            pool = pool[keep]
        if trajectory is not None:
            trajectory.append(int(pool.size))
    if pool.size == 1:
        chosen = int(pool[0])
    else:
        chosen = int(pool[rng.integers(pool.size)])
    stats.record(used, trajectory)
    return chosen


def select_parents(
    errors: ErrorMatrix,
    count: int,
    strategy: SelectionStrategy,
    rng: np.random.Generator,
    record_trajectory: bool = False,
) -> tuple[list[int], SelectionStats]:
    """Draw ``count`` parents. Each selection consumes its own generator
    stream derived from ``rng``, so a concurrent schedule over parent slots
    would reproduce the sequential result exactly."""
    if count < 0:
        raise ValueError("count must be >= 0")
    stats = SelectionStats()
    if count == 0:
        return [], stats
    context = prepare_strategy(errors, strategy)
    slot_seeds = rng.integers(0, 2**63, size=count)
    indices = [
        select_parent(
            errors,
            strategy,
            np.random.default_rng(int(seed)),
            stats,
            context=context,
            record_trajectory=record_trajectory,
        )
        for seed in slot_seeds
    ]
    return indices, stats
