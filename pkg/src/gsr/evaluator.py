"""Expression trees: parsing, vectorized evaluation, and fit metrics.

Expressions are small ASTs over dataset columns.  Evaluation is
element-wise in double precision and never raises on domain violations
(log of a non-positive value, division by zero, overflow): offending
entries come back non-finite and the reward machinery maps them to 0.

Feature leaves are written ``x[i]`` (1-based column index) or ``x.name``
(named column).  ``const`` leaves are free scalars fitted on a training
split by :func:`fit_constants`; until fitted they evaluate as 1.0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ExpressionError",
    "Expression",
    "Num",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Dataset",
    "parse_expression",
    "to_text",
    "evaluate",
    "mse",
    "reward",
    "reward_from_mse",
    "r_squared",
    "complexity",
    "exact_recovery",
    "fit_constants",
]

EXACT_RECOVERY_MSE = 1e-12


class ExpressionError(ValueError):
    """Raised for unparseable expression text or bad evaluation calls."""


class Expression:
    """Base class for expression-tree nodes."""

    __slots__ = ()


class Num(Expression):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)


class Const(Expression):
    """A fittable scalar leaf; ``value`` is None until fitted."""

    __slots__ = ("value", "slot")

    def __init__(self, value: float | None = None):
        self.value = value
        self.slot = -1


class Var(Expression):
    """Feature leaf: ``key`` is a 0-based column index or a column name."""

    __slots__ = ("key",)

    def __init__(self, key: int | str):
        self.key = key


class Unary(Expression):
    __slots__ = ("op", "arg")

    def __init__(self, op: str, arg: Expression):
        if op not in UNARY_OPS:
            raise ExpressionError(f"unknown unary operator {op!r}")
        self.op = op
        self.arg = arg


class Binary(Expression):
    __slots__ = ("op", "lhs", "rhs")

    def __init__(self, op: str, lhs: Expression, rhs: Expression):
        if op not in BINARY_OPS:
            raise ExpressionError(f"unknown binary operator {op!r}")
        self.op = op
        self.lhs = lhs
        self.rhs = rhs


def _harmonic(x: np.ndarray) -> np.ndarray:
    """Element-wise harmonic number H(round(x)); non-positive -> 0."""
    n = np.rint(x)
    out = np.full(n.shape, np.nan)
    ok = np.isfinite(n) & (n < 1e6)
    n_ok = n[ok].astype(int)
    hi = int(n_ok.max(initial=0))
    table = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, hi + 1))])
    out[ok] = table[np.clip(n_ok, 0, hi)]
    return out


UNARY_OPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "log": np.log,
    "log10": np.log10,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "neg": np.negative,
    # Used by benchmark target functions only; not reachable from the
    # shipped grammars.
    "arcsinh": np.arcsinh,
    "harmonic": _harmonic,
}

BINARY_OPS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,  # benchmark targets only
}


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<indexed>x\[\s*(?P<index>\d+)\s*\])
  | (?P<named>x\.(?P<name>[A-Za-z_]\w*))
  | (?P<number>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _lex(text: str) -> list[tuple[str, object]]:
    tokens: list[tuple[str, object]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"bad character {text[pos]!r} at position {pos} in {text!r}")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        if m.group("indexed"):
            tokens.append(("var", int(m.group("index")) - 1))
        elif m.group("named"):
            tokens.append(("var", m.group("name")))
        elif m.group("number"):
            tokens.append(("num", float(m.group("number"))))
        elif m.group("ident"):
            tokens.append(("ident", m.group("ident")))
        else:
            tokens.append(("op", m.group("op")))
    return tokens


class _Parser:
    """Recursive-descent parser with the usual arithmetic precedence."""

    def __init__(self, tokens: list[tuple[str, object]], text: str):
        self.tokens = tokens
        self.pos = 0
        self.text = text

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r} in {self.text!r}")

    def parse(self) -> Expression:
        node = self.sum_expr()
        if self.pos != len(self.tokens):
            raise ExpressionError(f"trailing tokens in {self.text!r}")
        return node

    def sum_expr(self) -> Expression:
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            _, op = self.take()
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.peek() in (("op", "*"), ("op", "/")):
            _, op = self.take()
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> Expression:
        if self.peek() == ("op", "-"):
            self.take()
            return Unary("neg", self.factor())
        return self.power()

    def power(self) -> Expression:
        node = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return Binary("^", node, self.factor())
        return node

    def atom(self) -> Expression:
        kind, val = self.take()
        if kind == "num":
            return Num(val)
        if kind == "var":
            return Var(val)
        if kind == "ident":
            if val == "const":
                return Const()
            if val in UNARY_OPS:
                self.expect_op("(")
                arg = self.sum_expr()
                self.expect_op(")")
                return Unary(val, arg)
            raise ExpressionError(f"unknown identifier {val!r} in {self.text!r}")
        if (kind, val) == ("op", "("):
            node = self.sum_expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected {val!r} in {self.text!r}")


def parse_expression(text: str) -> Expression:
    """Parse infix expression text into a tree."""
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    expr = _Parser(_lex(text), text).parse()
    _assign_const_slots(expr)
    return expr


def to_text(expr: Expression) -> str:
    """Infix rendering with explicit parentheses (re-parses to the same tree)."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Const):
        return "const" if expr.value is None else repr(expr.value)
    if isinstance(expr, Var):
        return f"x[{expr.key + 1}]" if isinstance(expr.key, int) else f"x.{expr.key}"
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return f"(-{to_text(expr.arg)})"
        return f"{expr.op}({to_text(expr.arg)})"
    if isinstance(expr, Binary):
        return f"({to_text(expr.lhs)}{expr.op}{to_text(expr.rhs)})"
    raise ExpressionError(f"not an expression node: {expr!r}")


def walk(expr: Expression):
    """Yield every node of the tree (preorder)."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.append(node.rhs)
            stack.append(node.lhs)


def _assign_const_slots(expr: Expression) -> int:
    """Number `const` leaves left-to-right; returns the slot count."""
    count = 0
    def visit(node):
        nonlocal count
        if isinstance(node, Const):
            node.slot = count
            count += 1
        elif isinstance(node, Unary):
            visit(node.arg)
        elif isinstance(node, Binary):
            visit(node.lhs)
            visit(node.rhs)
    visit(expr)
    return count


def const_count(expr: Expression) -> int:
    return sum(1 for n in walk(expr) if isinstance(n, Const))


# --- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    """Feature matrix, target vector, and split tag."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...] = ()
    split: str = "train"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D (rows, features)")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(
                f"target length {self.y.shape} does not match {self.X.shape[0]} rows"
            )
        if not self.columns:
            self.columns = tuple(f"x{i + 1}" for i in range(self.X.shape[1]))
        if len(self.columns) != self.X.shape[1]:
            raise ValueError("one column name per feature required")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


# --- evaluation and metrics --------------------------------------------------

def evaluate(
    expr: Expression,
    X: np.ndarray,
    columns: tuple[str, ...] | None = None,
    const_values: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate ``expr`` on every row of ``X``.

    Returns a float64 vector that may contain non-finite entries where
    the expression leaves its domain.  ``const_values`` overrides the
    values of `const` leaves by slot (used during fitting).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ExpressionError("X must be 2-D (rows, features)")
    rows = X.shape[0]

    def resolve(key) -> int:
        if isinstance(key, int):
            idx = key
        else:
            if columns is None or key not in columns:
                raise ExpressionError(f"unknown feature x.{key}")
            idx = columns.index(key)
        if not 0 <= idx < X.shape[1]:
            raise ExpressionError(f"feature index x[{idx + 1}] outside {X.shape[1]} columns")
        return idx

    def ev(node) -> np.ndarray:
        if isinstance(node, Num):
            return np.full(rows, node.value)
        if isinstance(node, Const):
            if const_values is not None:
                return np.full(rows, float(const_values[node.slot]))
            return np.full(rows, 1.0 if node.value is None else node.value)
        if isinstance(node, Var):
            return X[:, resolve(node.key)]
        if isinstance(node, Unary):
            return UNARY_OPS[node.op](ev(node.arg))
        if isinstance(node, Binary):
            return BINARY_OPS[node.op](ev(node.lhs), ev(node.rhs))
        raise ExpressionError(f"not an expression node: {node!r}")

    with np.errstate(all="ignore"):
        return ev(expr)


def mse(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    with np.errstate(all="ignore"):
        return float(np.mean((y - y_hat) ** 2))


def reward_from_mse(value: float) -> float:
    """Squash an error into (0, 1]: 1 / (1 + MSE)."""
    return 1.0 / (1.0 + value)


def reward(expr: Expression | None, dataset: Dataset, complete: bool = True) -> float:
    """Episode reward: 0 for incomplete/unevaluable, else 1/(1+MSE)."""
    if not complete or expr is None:
        return 0.0
    y_hat = evaluate(expr, dataset.X, dataset.columns)
    if not np.all(np.isfinite(y_hat)):
        return 0.0
    return reward_from_mse(mse(dataset.y, y_hat))


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot


def complexity(expr: Expression) -> int:
    """Operator nodes plus feature-leaf occurrences (literals don't count)."""
    c = 0
    for node in walk(expr):
        if isinstance(node, (Unary, Binary, Var)):
            c += 1
    return c


def exact_recovery(expr: Expression, test: Dataset) -> bool:
    """True iff predictions are finite and test MSE is below 1e-12."""
    if test.n_rows == 0:
        raise ValueError("empty test set")
    y_hat = evaluate(expr, test.X, test.columns)
    if not np.all(np.isfinite(y_hat)):
        return False
    return mse(test.y, y_hat) < EXACT_RECOVERY_MSE


# --- constant fitting ---------------------------------------------------------

CONST_SEARCH_LIMIT = 1e4


def _substitute_consts(expr: Expression, values: np.ndarray) -> Expression:
    if isinstance(expr, Const):
        return Num(float(values[expr.slot]))
    if isinstance(expr, Unary):
        return Unary(expr.op, _substitute_consts(expr.arg, values))
    if isinstance(expr, Binary):
        return Binary(
            expr.op,
            _substitute_consts(expr.lhs, values),
            _substitute_consts(expr.rhs, values),
        )
    return expr


def _refine_coordinate(obj, c: np.ndarray, j: int, f: float, budget: int) -> float:
    """Compass search along coordinate j: move on improvement, else halve."""
    step = max(abs(c[j]) * 0.9, 1.0)
    for _ in range(budget):
        base = c[j]
        moved = False
        for cand in (base + step, base - step):
            if abs(cand) > CONST_SEARCH_LIMIT:
                continue
            c[j] = cand
            fc = obj(c)
            if fc < f:
                f = fc
                moved = True
                break
            c[j] = base
        if not moved:
            step *= 0.5
            if step < 1e-14:
                break
    return f


_COARSE_MAGNITUDES = [0.0] + [
    s * 10.0 ** g for g in range(-2, 5) for s in (1.0, -1.0)
]


def fit_constants(
    expr: Expression,
    train: Dataset,
    budget: int = 40,
    seed: int = 0,
) -> Expression:
    """Fit `const` leaves by coordinate search on the training MSE.

    Derivative-free: a coarse scan over signed magnitudes in
    [-1e4, 1e4] per coordinate, then compass-search refinement, with 3
    restarts (all-ones plus two seeded log-scaled random starts).  The
    result never has a higher train MSE than the all-ones initialization;
    if nothing evaluates finitely, constants stay at 1.0.
    """
    k = _assign_const_slots(expr)
    if k == 0:
        return expr
    rng = np.random.default_rng(seed)

    def obj(values: np.ndarray) -> float:
        y_hat = evaluate(expr, train.X, train.columns, const_values=values)
        if not np.all(np.isfinite(y_hat)):
            return np.inf
        return float(np.mean((train.y - y_hat) ** 2))

    ones = np.ones(k)
    best_c, best_f = ones.copy(), obj(ones)

    for restart in range(3):
        if restart == 0:
            c = ones.copy()
        else:
            magnitude = 10.0 ** rng.uniform(-2.0, 4.0, size=k)
            sign = rng.choice([-1.0, 1.0], size=k)
            c = sign * magnitude
        f = obj(c)
        for _ in range(2):
            for j in range(k):
                base = c[j]
                local_best = f
                for cand in _COARSE_MAGNITUDES:
                    c[j] = cand
                    fc = obj(c)
                    if fc < local_best:
                        local_best, base = fc, cand
                c[j] = base
                f = _refine_coordinate(obj, c, j, local_best, budget)
        if f < best_f:
            best_f, best_c = f, c.copy()

    if not np.isfinite(best_f):
        best_c = ones
    return _substitute_consts(expr, best_c)
