"""Weighted expression trees.

A tree node applies its operator to the weighted outputs of its children:
``value = op(w_1 * child_1, ..., w_k * child_k)``. Leaves are either a
feature reference (``VAR``) or a literal (``CONST``). All operators are
protected so that evaluation of finite inputs never yields NaN/Inf:

* division returns 1 when the denominator magnitude is below ``DIV_EPS``
* sqrt and log act on the absolute value of their argument; log returns 0
  when the magnitude is below ``LOG_EPS``
* exp clamps its argument to at most ``EXP_MAX_ARG``
* every node output is clipped into ``[-VALUE_CAP, VALUE_CAP]``

Gradients follow the same semantics: wherever a protection rule is active
the local derivative is zero.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

DIV_EPS = 1e-12
LOG_EPS = 1e-12
EXP_MAX_ARG = 32.0
VALUE_CAP = 1e100

# Grow-style construction knobs.
_P_INTERNAL = 0.7
_P_CONST_LEAF = 0.2


class Op(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    SQUARE = "square"
    CUBE = "cube"
    SQRT = "sqrt"
    SIN = "sin"
    COS = "cos"
    EXP = "exp"
    LOG = "log"
    VAR = "var"
    CONST = "const"


_ARITY = {
    Op.ADD: 2,
    Op.SUB: 2,
    Op.MUL: 2,
    Op.DIV: 2,
    Op.SQUARE: 1,
    Op.CUBE: 1,
    Op.SQRT: 1,
    Op.SIN: 1,
    Op.COS: 1,
    Op.EXP: 1,
    Op.LOG: 1,
    Op.VAR: 0,
    Op.CONST: 0,
}

FUNCTION_OPS: tuple[Op, ...] = (
    Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.SQUARE, Op.CUBE,
    Op.SQRT, Op.SIN, Op.COS, Op.EXP, Op.LOG,
)
UNARY_OPS: tuple[Op, ...] = tuple(op for op in FUNCTION_OPS if _ARITY[op] == 1)
BINARY_OPS: tuple[Op, ...] = tuple(op for op in FUNCTION_OPS if _ARITY[op] == 2)

ComplexityTable = Mapping[Op, int]

# Per-operator costs; leaves cost 1 so the recursion bottoms out nonzero.
DEFAULT_COMPLEXITY: dict[Op, int] = {
    Op.ADD: 1,
    Op.SUB: 1,
    Op.DIV: 2,
    Op.MUL: 2,
    Op.SQUARE: 2,
    Op.SQRT: 2,
    Op.COS: 3,
    Op.SIN: 3,
    Op.CUBE: 3,
    Op.EXP: 4,
    Op.LOG: 4,
    Op.VAR: 1,
    Op.CONST: 1,
}

Path = tuple[int, ...]
EdgeKey = tuple[Path, int]


def arity(op: Op) -> int:
    return _ARITY[op]


@dataclass(frozen=True)
class ExprTree:
    """Immutable expression-tree node with one weight per child edge."""

    op: Op
    children: tuple["ExprTree", ...] = ()
    weights: tuple[float, ...] = ()
    index: int = 0      # feature column, VAR only
    value: float = 0.0  # literal payload, CONST only

    def __post_init__(self) -> None:
        k = _ARITY[self.op]
        if len(self.children) != k:
            raise ValueError(f"{self.op.value} takes {k} children, got {len(self.children)}")
        if len(self.weights) != k:
            raise ValueError(f"{self.op.value} takes {k} weights, got {len(self.weights)}")
        if any(not np.isfinite(w) for w in self.weights):
            raise ValueError(f"non-finite edge weight on {self.op.value} node")

    @property
    def is_leaf(self) -> bool:
        return _ARITY[self.op] == 0


def var(index: int) -> ExprTree:
    return ExprTree(Op.VAR, index=int(index))


def const(value: float) -> ExprTree:
    return ExprTree(Op.CONST, value=float(value))


def node(op: Op, *children: ExprTree, weights: Sequence[float] | None = None) -> ExprTree:
    if weights is None:
        weights = (1.0,) * len(children)
    return ExprTree(op, tuple(children), tuple(float(w) for w in weights))


# ---------------------------------------------------------------------------
# Evaluation


def _check_var_indices(tree: ExprTree, n_columns: int) -> None:
    for _, nd in iter_nodes(tree):
        if nd.op is Op.VAR and not 0 <= nd.index < n_columns:
            raise ValueError(
                f"feature index {nd.index} out of range for {n_columns} columns"
            )


def _raw_apply(op: Op, args: list[np.ndarray]) -> np.ndarray:
    if op is Op.ADD:
        return args[0] + args[1]
    if op is Op.SUB:
        return args[0] - args[1]
    if op is Op.MUL:
        return args[0] * args[1]
    if op is Op.DIV:
        a, b = args
        safe = np.abs(b) > DIV_EPS
        return np.where(safe, a / np.where(safe, b, 1.0), 1.0)
    if op is Op.SQUARE:
        return args[0] * args[0]
    if op is Op.CUBE:
        return args[0] ** 3
    if op is Op.SQRT:
        return np.sqrt(np.abs(args[0]))
    if op is Op.SIN:
        return np.sin(args[0])
    if op is Op.COS:
        return np.cos(args[0])
    if op is Op.EXP:
        return np.exp(np.minimum(args[0], EXP_MAX_ARG))
    if op is Op.LOG:
        a = args[0]
        safe = np.abs(a) > LOG_EPS
        return np.where(safe, np.log(np.abs(np.where(safe, a, 1.0))), 0.0)
    raise AssertionError(op)


def _value(tree: ExprTree, X: np.ndarray, memo: dict[int, np.ndarray]) -> np.ndarray:
    cached = memo.get(id(tree))
    if cached is not None:
        return cached
    if tree.op is Op.VAR:
        out = X[:, tree.index].astype(float, copy=True)
    elif tree.op is Op.CONST:
        out = np.full(X.shape[0], tree.value, dtype=float)
    else:
        args = [w * _value(c, X, memo) for w, c in zip(tree.weights, tree.children)]
        out = np.clip(_raw_apply(tree.op, args), -VALUE_CAP, VALUE_CAP)
    memo[id(tree)] = out
    return out


def evaluate(tree: ExprTree, X: np.ndarray) -> np.ndarray:
    """Evaluate the tree on every row of ``X`` under protected semantics."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    _check_var_indices(tree, X.shape[1])
    return _value(tree, X, {})


def _local_partials(op: Op, args: list[np.ndarray], raw: np.ndarray) -> list[np.ndarray]:
    """d(raw)/d(arg_i) with zero wherever a protection rule fired."""
    clamp_ok = np.abs(raw) <= VALUE_CAP  # output clip inactive
    if op is Op.ADD:
        parts = [np.ones_like(raw), np.ones_like(raw)]
    elif op is Op.SUB:
        parts = [np.ones_like(raw), -np.ones_like(raw)]
    elif op is Op.MUL:
        parts = [args[1], args[0]]
    elif op is Op.DIV:
        a, b = args
        safe = np.abs(b) > DIV_EPS
        bb = np.where(safe, b, 1.0)
        parts = [np.where(safe, 1.0 / bb, 0.0), np.where(safe, -a / (bb * bb), 0.0)]
    elif op is Op.SQUARE:
        parts = [2.0 * args[0]]
    elif op is Op.CUBE:
        parts = [3.0 * args[0] * args[0]]
    elif op is Op.SQRT:
        a = args[0]
        safe = np.abs(a) > DIV_EPS
        root = np.sqrt(np.abs(np.where(safe, a, 1.0)))
        parts = [np.where(safe, np.sign(a) / (2.0 * root), 0.0)]
    elif op is Op.SIN:
        parts = [np.cos(args[0])]
    elif op is Op.COS:
        parts = [-np.sin(args[0])]
    elif op is Op.EXP:
        a = args[0]
        parts = [np.where(a <= EXP_MAX_ARG, np.exp(np.minimum(a, EXP_MAX_ARG)), 0.0)]
    elif op is Op.LOG:
        a = args[0]
        safe = np.abs(a) > LOG_EPS
        parts = [np.where(safe, 1.0 / np.where(safe, a, 1.0), 0.0)]
    else:
        raise AssertionError(op)
    return [p * clamp_ok for p in parts]


def _backward(
    tree: ExprTree,
    X: np.ndarray,
    adjoint: np.ndarray,
    path: Path,
    memo: dict[int, np.ndarray],
    grads: dict[EdgeKey, np.ndarray],
) -> None:
    if tree.is_leaf:
        return
    args = [w * _value(c, X, memo) for w, c in zip(tree.weights, tree.children)]
    raw = _raw_apply(tree.op, args)
    parts = _local_partials(tree.op, args, raw)
    for i, (w, child) in enumerate(zip(tree.weights, tree.children)):
        contrib = adjoint * parts[i] * _value(child, X, memo)
        key = (path, i)
        if key in grads:
            grads[key] = grads[key] + contrib
        else:
            grads[key] = contrib
        _backward(child, X, adjoint * parts[i] * w, path + (i,), memo, grads)


def gradient(tree: ExprTree, X: np.ndarray) -> dict[EdgeKey, np.ndarray]:
    """Per-row partials of the tree output w.r.t. every edge weight.

    Keys are ``(path, i)`` where ``path`` addresses the node owning the
    edge (root is the empty tuple) and ``i`` is the child slot.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    _check_var_indices(tree, X.shape[1])
    grads: dict[EdgeKey, np.ndarray] = {}
    _backward(tree, X, np.ones(X.shape[0]), (), {}, grads)
    return grads


# ---------------------------------------------------------------------------
# Structure measures and editing


def size(tree: ExprTree) -> int:
    """Total node count, leaves included."""
    return 1 + sum(size(c) for c in tree.children)


def depth(tree: ExprTree) -> int:
    """Height in nodes: a lone leaf has depth 1."""
    if tree.is_leaf:
        return 1
    return 1 + max(depth(c) for c in tree.children)


def complexity(tree: ExprTree, table: ComplexityTable | None = None) -> int:
    """Recursive cost: leaves return their table cost, internal nodes
    return their cost times the sum of child complexities."""
    t = DEFAULT_COMPLEXITY if table is None else table
    if tree.is_leaf:
        return int(t[tree.op])
    return int(t[tree.op]) * sum(complexity(c, t) for c in tree.children)


def iter_nodes(tree: ExprTree, path: Path = ()) -> Iterator[tuple[Path, ExprTree]]:
    """Preorder traversal of (path, node) pairs."""
    yield path, tree
    for i, child in enumerate(tree.children):
        yield from iter_nodes(child, path + (i,))


def get_node(tree: ExprTree, path: Path) -> ExprTree:
    nd = tree
    for i in path:
        nd = nd.children[i]
    return nd


def replace_node(tree: ExprTree, path: Path, new: ExprTree) -> ExprTree:
    if not path:
        return new
    i = path[0]
    kids = list(tree.children)
    kids[i] = replace_node(kids[i], path[1:], new)
    return ExprTree(tree.op, tuple(kids), tree.weights, tree.index, tree.value)


def edge_keys(tree: ExprTree) -> list[EdgeKey]:
    """All (path, slot) edge addresses in preorder, matching gradient keys."""
    keys: list[EdgeKey] = []
    for path, nd in iter_nodes(tree):
        for i in range(len(nd.children)):
            keys.append((path, i))
    return keys


def get_weights(tree: ExprTree) -> np.ndarray:
    """Edge weights flattened in preorder edge order."""
    return np.array([get_node(tree, p).weights[i] for p, i in edge_keys(tree)], dtype=float)


def set_weights(tree: ExprTree, flat: Sequence[float]) -> ExprTree:
    """Rebuild the tree with weights taken from ``flat`` in preorder edge order."""
    flat = list(flat)
    keys = edge_keys(tree)
    if len(flat) != len(keys):
        raise ValueError(f"expected {len(keys)} weights, got {len(flat)}")
    lookup = {key: float(w) for key, w in zip(keys, flat)}

    def rebuild(nd: ExprTree, path: Path) -> ExprTree:
        if nd.is_leaf:
            return nd
        kids = tuple(rebuild(c, path + (i,)) for i, c in enumerate(nd.children))
        ws = tuple(lookup[(path, i)] for i in range(len(kids)))
        return ExprTree(nd.op, kids, ws, nd.index, nd.value)

    return rebuild(tree, ())


# ---------------------------------------------------------------------------
# Random construction


def random_leaf(n_features: int, rng: np.random.Generator) -> ExprTree:
    if rng.random() < _P_CONST_LEAF:
        return const(float(rng.normal()))
    return var(int(rng.integers(n_features)))


def random_tree(max_depth: int, n_features: int, rng: np.random.Generator) -> ExprTree:
    """Grow-style random tree of depth at most ``max_depth`` (a lone leaf
    has depth 1). All edge weights start at 1."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if n_features < 1:
        raise ValueError("n_features must be >= 1")

    def grow(budget: int) -> ExprTree:
        if budget <= 1 or rng.random() >= _P_INTERNAL:
            return random_leaf(n_features, rng)
        op = FUNCTION_OPS[int(rng.integers(len(FUNCTION_OPS)))]
        kids = tuple(grow(budget - 1) for _ in range(_ARITY[op]))
        return ExprTree(op, kids, (1.0,) * len(kids))

    return grow(max_depth)


# ---------------------------------------------------------------------------
# Rendering

_INFIX = {Op.ADD: "+", Op.SUB: "-", Op.MUL: "*", Op.DIV: "/"}
_SUFFIX = {Op.SQUARE: "^2", Op.CUBE: "^3"}
_CALL = {Op.SQRT: "sqrt", Op.SIN: "sin", Op.COS: "cos", Op.EXP: "exp", Op.LOG: "log"}


def to_infix(tree: ExprTree, feature_names: Sequence[str] | None = None) -> str:
    """Human-readable rendering; non-unit edge weights appear as explicit
    multiplicative coefficients."""

    def term(child: ExprTree, w: float) -> str:
        body = render(child)
        if w == 1.0:
            return body
        return f"{w:.6g}*{body}"

    def render(nd: ExprTree) -> str:
        if nd.op is Op.VAR:
            if feature_names is not None:
                return feature_names[nd.index]
            return f"x{nd.index}"
        if nd.op is Op.CONST:
            return f"{nd.value:.6g}"
        parts = [term(c, w) for c, w in zip(nd.children, nd.weights)]
        if nd.op in _INFIX:
            return f"({parts[0]} {_INFIX[nd.op]} {parts[1]})"
        if nd.op in _SUFFIX:
            return f"({parts[0]}){_SUFFIX[nd.op]}"
        return f"{_CALL[nd.op]}({parts[0]})"

    return render(tree)
