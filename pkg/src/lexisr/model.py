"""Individuals: expression-tree features feeding a ridge-regression head.

An individual owns an ordered list of feature trees. Fitting evaluates
every tree into a design matrix (plus a constant intercept column), solves
the penalized normal equations for the head, and caches fitness (MSE on
the fit data), complexity, size, and per-case absolute errors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import expr
from .data import Dataset
from .expr import ExprTree

_ident_counter = itertools.count(1)


class RankDeficiencyError(ValueError):
    """Normal equations are singular at zero regularization."""


@dataclass(frozen=True)
class RidgeConfig:
    regularization_strength: float = 1e-6

    def __post_init__(self) -> None:
        if self.regularization_strength < 0:
            raise ValueError("regularization_strength must be >= 0")


@dataclass
class Individual:
    features: list[ExprTree]
    coefficients: np.ndarray | None = None  # one per feature tree
    intercept: float = 0.0
    fitness: float | None = None
    complexity: int = 0
    size: int = 0
    case_errors_cache: np.ndarray | None = None
    ident: int = field(default_factory=lambda: next(_ident_counter))

    def __post_init__(self) -> None:
        if not self.features:
            raise ValueError("an individual needs at least one feature tree")

    @property
    def is_fitted(self) -> bool:
        return self.coefficients is not None

    def spawn(self, features: list[ExprTree]) -> "Individual":
        """Unfitted descendant with a fresh identity."""
        return Individual(features=features)


def new_individual(features: list[ExprTree]) -> Individual:
    return Individual(features=list(features))


def design_matrix(ind: Individual, X: np.ndarray) -> np.ndarray:
    """One column per feature tree plus a trailing constant-1 intercept column."""
    X = np.asarray(X, dtype=float)
    cols = [expr.evaluate(tree, X) for tree in ind.features]
    cols.append(np.ones(X.shape[0]))
    return np.column_stack(cols)


def fit_ridge(Phi: np.ndarray, y: np.ndarray, cfg: RidgeConfig) -> np.ndarray:
    """Solve (Phi' Phi + lam*D) beta = Phi' y with a symmetric positive
    solve; the last column is the intercept and is excluded from the
    penalty (D is the identity with a zero in the intercept slot)."""
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if Phi.ndim != 2 or Phi.shape[1] < 1:
        raise ValueError("Phi must be a 2-D matrix with at least one column")
    if Phi.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: {Phi.shape[0]} vs {y.shape[0]}")
    lam = cfg.regularization_strength
    gram = Phi.T @ Phi
    if lam > 0:
        penalty = np.full(Phi.shape[1], lam)
        penalty[-1] = 0.0  # intercept column
        gram = gram + np.diag(penalty)
    rhs = Phi.T @ y
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as err:
        raise RankDeficiencyError(
            f"normal equations are singular at regularization={lam}"
        ) from err
    return cho_solve(factor, rhs)


def mse(y_hat: np.ndarray, y: np.ndarray) -> float:
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape or y.size < 1:
        raise ValueError("mse needs two equal-length non-empty vectors")
    return float(np.mean((y_hat - y) ** 2))


def r2(y_hat: np.ndarray, y: np.ndarray) -> float:
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape or y.size < 2:
        raise ValueError("r2 needs two equal-length vectors of size >= 2")
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2 is undefined for constant targets")
    ss_res = float(np.sum((y_hat - y) ** 2))
    return 1.0 - ss_res / ss_tot


def predict(ind: Individual, X: np.ndarray) -> np.ndarray:
    if not ind.is_fitted:
        raise ValueError("individual is not fitted")
    X = np.asarray(X, dtype=float)
    out = np.full(X.shape[0], ind.intercept)
    for beta, tree in zip(ind.coefficients, ind.features):
        out = out + beta * expr.evaluate(tree, X)
    return out


def case_errors(ind: Individual, ds: Dataset) -> np.ndarray:
    """Per-row absolute prediction errors; cached on the individual."""
    errors = np.abs(predict(ind, ds.features) - ds.targets)
    ind.case_errors_cache = errors
    return errors


def fit_individual(ind: Individual, fit_data: Dataset, cfg: RidgeConfig) -> Individual:
    """Fit the ridge head on ``fit_data``; refresh fitness (MSE on the same
    data), complexity, size, and the case-error cache."""
    Phi = design_matrix(ind, fit_data.features)
    beta = fit_ridge(Phi, fit_data.targets, cfg)
    ind.coefficients = beta[:-1]
    ind.intercept = float(beta[-1])
    y_hat = Phi @ beta
    ind.fitness = mse(y_hat, fit_data.targets)
    ind.complexity = sum(expr.complexity(t) for t in ind.features)
    ind.size = sum(expr.size(t) for t in ind.features)
    ind.case_errors_cache = np.abs(y_hat - fit_data.targets)
    return ind


def _weight_gradients(ind: Individual, fit_data: Dataset) -> list[np.ndarray]:
    """d(MSE)/d(weights) per feature tree, flattened in preorder edge order,
    holding the current head fixed."""
    d = fit_data.n_samples
    residual = predict(ind, fit_data.features) - fit_data.targets
    out: list[np.ndarray] = []
    for beta, tree in zip(ind.coefficients, ind.features):
        grads = expr.gradient(tree, fit_data.features)
        scale = 2.0 * beta / d
        out.append(
            np.array([scale * float(residual @ grads[key]) for key in expr.edge_keys(tree)])
        )
    return out


def optimize_weights(
    ind: Individual,
    fit_data: Dataset,
    iters: int,
    learning_rate: float = 0.1,
    cfg: RidgeConfig | None = None,
) -> Individual:
    """Gradient descent on tree edge weights against the pipeline MSE.

    The head is refit once per round. The learning rate halves after a
    worsening step. Returns the best state seen along the trajectory, so
    the result is never worse than the input. Rounds with non-finite
    gradients are skipped.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if not ind.is_fitted:
        raise ValueError("individual is not fitted")

    best_trees = list(ind.features)
    best_coefficients = ind.coefficients.copy()
    best_intercept = ind.intercept
    best_fitness = ind.fitness

    lr = learning_rate
    previous_fitness = ind.fitness
    if cfg is None:
        cfg = RidgeConfig()
    for _ in range(iters):
        grads = _weight_gradients(ind, fit_data)
        if any(not np.all(np.isfinite(g)) for g in grads):
            continue
        new_trees = []
        for tree, g in zip(ind.features, grads):
            if g.size:
                tree = expr.set_weights(tree, expr.get_weights(tree) - lr * g)
            new_trees.append(tree)
        ind.features = new_trees
        fit_individual(ind, fit_data, cfg)
        if ind.fitness < best_fitness:
            best_trees = list(ind.features)
            best_coefficients = ind.coefficients.copy()
            best_intercept = ind.intercept
            best_fitness = ind.fitness
        if ind.fitness > previous_fitness:
            lr *= 0.5
        previous_fitness = ind.fitness

    ind.features = best_trees
    ind.coefficients = best_coefficients
    ind.intercept = best_intercept
    ind.fitness = best_fitness
    ind.complexity = sum(expr.complexity(t) for t in ind.features)
    ind.size = sum(expr.size(t) for t in ind.features)
    ind.case_errors_cache = None
    return ind


def model_report(ind: Individual, feature_names: list[str] | None = None) -> dict:
    """Structured description of a fitted individual."""
    if not ind.is_fitted:
        raise ValueError("individual is not fitted")
    return {
        "features": [expr.to_infix(t, feature_names) for t in ind.features],
        "coefficients": [float(c) for c in ind.coefficients],
        "intercept": float(ind.intercept),
        "fitness": float(ind.fitness),
        "complexity": int(ind.complexity),
        "size": int(ind.size),
    }
