"""Dataset ingestion, deterministic splitting, batching, synthetic data.

Datasets are immutable after construction (arrays are marked read-only);
every randomized operation is a pure function of its inputs and the seed
or generator state it receives.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Base class for ingestion/validation failures."""


class MissingTargetColumnError(DatasetError):
    pass


class NonNumericCellError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if features.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        if targets.ndim != 1:
            raise DatasetError("targets must be a 1-D vector")
        if features.shape[0] != targets.shape[0]:
            raise DatasetError(
                f"row mismatch: {features.shape[0]} feature rows vs {targets.shape[0]} targets"
            )
        if len(self.feature_names) != features.shape[1]:
            raise DatasetError(
                f"{len(self.feature_names)} names for {features.shape[1]} feature columns"
            )
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(targets)):
            raise DatasetError("dataset contains non-finite values")
        features.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset in the given order."""
        return Dataset(self.features[rows], self.targets[rows], self.feature_names)


@dataclass(frozen=True)
class SplitPair:
    first: Dataset
    second: Dataset
    seed: int


def load_csv(path: str | Path, target_column: str) -> Dataset:
    """Read a comma-separated file with a header row; the target column is
    removed from the features. Row order is preserved. Cells must parse as
    finite decimal numbers."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise MissingTargetColumnError(
                f"{path}: no column named {target_column!r} in header {header}"
            )
        target_idx = header.index(target_column)
        rows: list[list[float]] = []
        for line_no, record in enumerate(reader, start=2):
            parsed: list[float] = []
            for col_idx, cell in enumerate(record):
                try:
                    value = float(cell)
                except ValueError:
                    raise NonNumericCellError(
                        f"{path}:{line_no}: non-numeric value {cell.strip()!r} "
                        f"in column {header[col_idx] if col_idx < len(header) else col_idx}"
                    ) from None
                if not np.isfinite(value):
                    raise NonNumericCellError(
                        f"{path}:{line_no}: non-finite value {cell.strip()!r} "
                        f"in column {header[col_idx] if col_idx < len(header) else col_idx}"
                    )
                parsed.append(value)
            if len(parsed) != len(header):
                raise DatasetError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(parsed)}"
                )
            rows.append(parsed)
    if not rows:
        raise EmptyDatasetError(f"{path}: header only, no data rows")
    matrix = np.array(rows, dtype=float)
    targets = matrix[:, target_idx]
    features = np.delete(matrix, target_idx, axis=1)
    names = tuple(h for i, h in enumerate(header) if i != target_idx)
    return Dataset(features, targets, names)


def _split_rows(d: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint covering row partition; the second side gets round-half-up
    of fraction*d rows with a floor of one row per side."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if d < 2:
        raise ValueError(f"need at least 2 samples to split, got {d}")
    n_second = int(fraction * d + 0.5)
    n_second = max(1, min(d - 1, n_second))
    perm = np.random.default_rng(seed).permutation(d)
    second = np.sort(perm[:n_second])
    first = np.sort(perm[n_second:])
    return first, second


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> SplitPair:
    """Seeded uniform shuffle split; deterministic per seed."""
    first, second = _split_rows(ds.n_samples, test_fraction, seed)
    return SplitPair(ds.take(first), ds.take(second), seed)


def validation_split(train: Dataset, fraction: float, seed: int) -> SplitPair:
    """Split the training data into a fit partition (first) and a
    validation partition (second)."""
    first, second = _split_rows(train.n_samples, fraction, seed)
    return SplitPair(train.take(first), train.take(second), seed)


def make_batch(fit: Dataset, batch_size: int, rng: np.random.Generator) -> Dataset:
    """Sample min(batch_size, d) rows without replacement; advances ``rng``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    k = min(batch_size, fit.n_samples)
    rows = rng.permutation(fit.n_samples)[:k]
    return fit.take(rows)


def friedman1_target(X: np.ndarray) -> np.ndarray:
    """Noise-free target for uniform inputs; uses the first five columns."""
    if X.shape[1] < 5:
        raise ValueError("friedman1 target needs at least 5 feature columns")
    return (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )


def synth_friedman1(n_samples: int, noise_sd: float, seed: int) -> Dataset:
    """Ten uniform [0, 1] features; the standard friedman #1 response plus
    Gaussian noise. Deterministic per seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    X = rng.random((n_samples, 10))
    y = friedman1_target(X)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, n_samples)
    names = tuple(f"x{i}" for i in range(10))
    return Dataset(X, y, names)
