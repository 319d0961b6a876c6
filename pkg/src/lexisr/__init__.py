"""Symbolic regression with lexicase parent selection.

Expression-tree features feed a ridge-regression head; parents are chosen
by lexicase selection with either MAD tolerances or minimum-variance
split thresholds.
"""
from .data import (
    Dataset,
    SplitPair,
    load_csv,
    make_batch,
    synth_friedman1,
    train_test_split,
    validation_split,
)
from .evolve import (
    EvolutionConfig,
    GenerationLog,
    SurvivalMode,
    crossover,
    mutate,
    nsga2_survive,
    run,
)
from .expr import ExprTree, Op, complexity, evaluate, gradient, random_tree, size, to_infix
from .model import (
    Individual,
    RidgeConfig,
    case_errors,
    design_matrix,
    fit_individual,
    fit_ridge,
    mse,
    optimize_weights,
    predict,
    r2,
)
from .selection import (
    ErrorMatrix,
    SelectionStats,
    SelectionStrategy,
    mad,
    mvt_threshold,
    select_parent,
    select_parents,
)

__version__ = "0.1.0"
