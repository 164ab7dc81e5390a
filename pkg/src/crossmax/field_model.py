"""Grids, coefficient expressions and sampled fields.

Nodes of a :class:`Grid` are ordered lexicographically by ``(y, x)`` with
``x`` varying fastest.  Every sampled field stores values on *all* nodes,
boundary included; discrete operators act on the interior nodes only.
Vector fields and block operators use component-major ordering (all nodes
of component 0, then component 1, ...).
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import (
    DimensionError,
    ExprSyntaxError,
    FieldEvaluationError,
    UnknownIdentifierError,
)

__all__ = [
    "Grid",
    "CoeffExpr",
    "parse_coeff",
    "as_expr",
    "eval_field",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "gradient",
    "gradient_array",
]


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``(0,1)`` or ``(0,1)^2``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    n_cells : int
        Number of cells per axis (at least 4).  The spacing is ``1/n_cells``.
    """

    dim: int
    n_cells: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise DimensionError(f"grid dimension must be 1 or 2, got {self.dim}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise DimensionError(f"n_cells must be an integer >= 4, got {self.n_cells}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of the node set, indexed ``[iy, ix]`` in 2D."""
        n1 = self.n_cells + 1
        return (n1,) if self.dim == 1 else (n1, n1)

    @property
    def n_nodes(self) -> int:
        return (self.n_cells + 1) ** self.dim

    @property
    def n_interior(self) -> int:
        return (self.n_cells - 1) ** self.dim

    @functools.cached_property
    def index_arrays(self) -> tuple[np.ndarray, ...]:
        """Integer node coordinates ``(ix,)`` or ``(ix, iy)`` per node."""
        n1 = self.n_cells + 1
        flat = np.arange(self.n_nodes)
        if self.dim == 1:
            return (flat,)
        return (flat % n1, flat // n1)

    @functools.cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Physical coordinates ``(x,)`` or ``(x, y)`` per node."""
        return tuple(ix * self.h for ix in self.index_arrays)

    @functools.cached_property
    def boundary_distance(self) -> np.ndarray:
        """Graph distance of each node to the boundary (0 on the boundary)."""
        n = self.n_cells
        d = np.full(self.n_nodes, n, dtype=int)
        for ix in self.index_arrays:
            d = np.minimum(d, np.minimum(ix, n - ix))
        return d

    @functools.cached_property
    def interior_nodes(self) -> np.ndarray:
        """Full-grid indices of interior nodes in lexicographic order."""
        return np.flatnonzero(self.boundary_distance > 0)

    @functools.cached_property
    def full_to_interior(self) -> np.ndarray:
        """Map full-grid index to interior index, ``-1`` on the boundary."""
        m = np.full(self.n_nodes, -1, dtype=int)
        m[self.interior_nodes] = np.arange(self.n_interior)
        return m

    def to_interior(self, values: np.ndarray) -> np.ndarray:
        """Restrict node values (last axis = nodes) to interior nodes."""
        values = np.asarray(values)
        if values.shape[-1] != self.n_nodes:
            raise DimensionError("last axis must run over grid nodes")
        return values[..., self.interior_nodes]

    def to_full(self, interior_values: np.ndarray) -> np.ndarray:
        """Extend interior values by zero boundary values (last axis)."""
        iv = np.asarray(interior_values, dtype=float)
        if iv.shape[-1] != self.n_interior:
            raise DimensionError("last axis must run over interior nodes")
        out = np.zeros(iv.shape[:-1] + (self.n_nodes,))
        out[..., self.interior_nodes] = iv
        return out

    def node_coords(self, node: int) -> tuple[float, ...]:
        return tuple(float(c[node]) for c in self.coords)


# ---------------------------------------------------------------------------
# Expression language
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Unary, Binary, Call]

_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTANTS = {"pi": math.pi}
_VARIABLES = ("x", "y", "phi1")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}",
                                  _byte_offset(text, pos), text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: tuple[str, str, int]) -> ExprSyntaxError:
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]), self.text)

    def expect(self, value: str) -> None:
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            raise self.error(f"expected {value!r}", tok)

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise self.error(f"unexpected token {tok[1]!r}", tok)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            arg = self.unary()
            return Unary("-", arg) if tok[1] == "-" else arg
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if value in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value in _VARIABLES:
                return Var(value)
            if value in _CONSTANTS:
                return Var(value)
            raise UnknownIdentifierError(f"unknown identifier {value!r}",
                                         _byte_offset(self.text, tok[2]), self.text)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "eof":
            raise self.error("unexpected end of expression", tok)
        raise self.error(f"unexpected token {value!r}", tok)


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"(-{_print(node.arg)})"
    if isinstance(node, Binary):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({_print(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def _names(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Unary):
        return _names(node.arg)
    if isinstance(node, Binary):
        return _names(node.left) | _names(node.right)
    if isinstance(node, Call):
        return _names(node.arg)
    return set()


def _evaluate(node: Node, env: dict[str, np.ndarray]) -> np.ndarray:
    if isinstance(node, Num):
        return np.asarray(node.value)
    if isinstance(node, Var):
        if node.name in _CONSTANTS:
            return np.asarray(_CONSTANTS[node.name])
        return env[node.name]
    if isinstance(node, Unary):
        return -_evaluate(node.arg, env)
    if isinstance(node, Call):
        return _FUNCTIONS[node.func](_evaluate(node.arg, env))
    a = _evaluate(node.left, env)
    b = _evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return np.true_divide(a, b)
    return np.power(a, b)


@dataclass(frozen=True)
class CoeffExpr:
    """Parsed coefficient expression.

    Use :func:`parse_coeff` to build one; ``str(expr)`` is the canonical
    fully parenthesised form and parses back to the same tree.
    """

    root: Node
    source: str = field(default="", compare=False)

    def __str__(self) -> str:
        return _print(self.root)

    @property
    def names(self) -> set[str]:
        return _names(self.root)

    @property
    def is_constant(self) -> bool:
        return not (self.names & set(_VARIABLES))

    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError("expression depends on position")
        with np.errstate(all="ignore"):
            return float(_evaluate(self.root, {}))


def parse_coeff(text: str) -> CoeffExpr:
    """Parse a coefficient expression.

    The language has numbers, the variables ``x``, ``y`` and ``phi1``, the
    constant ``pi``, binary ``+ - * / ^`` (``^`` right associative), unary
    minus and the functions ``sin cos exp sqrt abs``.

    Raises
    ------
    ExprSyntaxError
        With the byte offset of the offending token.
    UnknownIdentifierError
        For names outside the language.
    """
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return CoeffExpr(_Parser(text).parse(), text)


def as_expr(value: Union[str, float, int, CoeffExpr]) -> CoeffExpr:
    """Coerce a string, number or expression to :class:`CoeffExpr`."""
    if isinstance(value, CoeffExpr):
        return value
    if isinstance(value, str):
        return parse_coeff(value)
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        v = float(value)
        if not math.isfinite(v):
            raise FieldEvaluationError("non-finite constant coefficient", 0)
        return CoeffExpr(Unary("-", Num(-v)) if v < 0 else Num(v), repr(v))
    raise TypeError(f"cannot interpret {value!r} as a coefficient")


@functools.lru_cache(maxsize=32)
def _phi1_values(grid: Grid) -> np.ndarray:
    # lazy imports: the eigen-solver itself consumes this module
    from .discrete_operator import assemble_scalar
    from .linear_core import principal_eigenpair

    one = ScalarField(grid, np.ones(grid.n_nodes))
    zero = ScalarField(grid, np.zeros(grid.n_nodes))
    op = assemble_scalar(one, None, zero, grid)
    vals = principal_eigenpair(op).phi.values[0].copy()
    vals.setflags(write=False)
    return vals


def eval_field(expr: Union[CoeffExpr, str, float], grid: Grid) -> "ScalarField":
    """Evaluate an expression at every grid node.

    ``phi1`` resolves to the discrete principal eigenfunction of the
    Dirichlet Laplacian on ``grid``, normalised to sup-norm 1.

    Raises
    ------
    FieldEvaluationError
        If the value at some node is not finite.
    """
    expr = as_expr(expr)
    names = expr.names
    env: dict[str, np.ndarray] = {"x": grid.coords[0]}
    if "y" in names:
        if grid.dim < 2:
            raise DimensionError("variable 'y' used on a 1D grid")
        env["y"] = grid.coords[1]
    if "phi1" in names:
        env["phi1"] = _phi1_values(grid)
    with np.errstate(all="ignore"):
        vals = np.broadcast_to(_evaluate(expr.root, env), (grid.n_nodes,)).astype(float)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FieldEvaluationError(f"expression {expr} is not finite", int(bad[0]))
    return ScalarField(grid, vals)


# ---------------------------------------------------------------------------
# Sampled fields
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class ScalarField:
    """Scalar values on every node of a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = _frozen(values)
        if values.shape != (grid.n_nodes,):
            raise DimensionError(f"expected {grid.n_nodes} node values, got {values.shape}")
        self.grid = grid
        self.values = values

    def interior(self) -> np.ndarray:
        return self.grid.to_interior(self.values)

    def __repr__(self) -> str:
        return f"ScalarField(grid={self.grid}, max={np.max(np.abs(self.values)):.3g})"


class VectorField:
    """``m`` component fields stored as an ``(m, n_nodes)`` array."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = _frozen(values)
        if values.ndim == 1:
            values = _frozen(values.reshape(1, -1))
        if values.ndim != 2 or values.shape[1] != grid.n_nodes:
            raise DimensionError(f"expected (m, {grid.n_nodes}) values, got {values.shape}")
        self.grid = grid
        self.values = values

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_interior(cls, grid: Grid, flat: np.ndarray, m: int) -> "VectorField":
        """Build from a component-major vector of interior unknowns."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (m * grid.n_interior,):
            raise DimensionError("interior vector length does not match m * n_interior")
        return cls(grid, grid.to_full(flat.reshape(m, grid.n_interior)))

    @classmethod
    def from_exprs(cls, exprs: Sequence[Union[str, float, CoeffExpr]], grid: Grid) -> "VectorField":
        return cls(grid, np.stack([eval_field(e, grid).values for e in exprs]))

    def interior_flat(self) -> np.ndarray:
        """Component-major vector of interior values."""
        return self.grid.to_interior(self.values).reshape(-1)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])

    def __repr__(self) -> str:
        return f"VectorField(m={self.m}, grid={self.grid})"


class MatrixField:
    """``n x n`` matrix sampled at every node, stored as ``(n_nodes, n, n)``.

    Parameters
    ----------
    grid : Grid
    values : ndarray, shape (n_nodes, n, n)
    exprs : optional nested list of :class:`CoeffExpr` the values came from
    """

    __slots__ = ("grid", "values", "exprs")

    def __init__(self, grid: Grid, values: np.ndarray, exprs=None):
        values = _frozen(values)
        if values.ndim != 3 or values.shape[0] != grid.n_nodes or values.shape[1] != values.shape[2]:
            raise DimensionError(f"expected (n_nodes, n, n) values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.flatnonzero(~np.all(np.isfinite(values), axis=(1, 2)))
            raise FieldEvaluationError("matrix field has non-finite entries", int(bad[0]))
        self.grid = grid
        self.values = values
        self.exprs = exprs

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, matrix, grid: Grid) -> "MatrixField":
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise DimensionError("matrix must be square")
        return cls(grid, np.broadcast_to(M, (grid.n_nodes,) + M.shape))

    @classmethod
    def identity(cls, n: int, grid: Grid) -> "MatrixField":
        return cls.constant(np.eye(n), grid)

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[Union[str, float, CoeffExpr]]],
                     grid: Grid) -> "MatrixField":
        """Evaluate a nested list of expressions entrywise."""
        n = len(entries)
        if any(len(row) != n for row in entries):
            raise DimensionError("matrix of expressions must be square")
        exprs = [[as_expr(e) for e in row] for row in entries]
        vals = np.empty((grid.n_nodes, n, n))
        for i in range(n):
            for j in range(n):
                vals[:, i, j] = eval_field(exprs[i][j], grid).values
        return cls(grid, vals, exprs)

    def at(self, node: int) -> np.ndarray:
        return np.array(self.values[node])

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[:, i, j])

    def variation(self) -> float:
        """Max deviation of any entry from its value at node 0."""
        return float(np.max(np.abs(self.values - self.values[0]))) if self.values.size else 0.0

    def is_constant(self, tol: float = 0.0) -> bool:
        return self.variation() <= tol

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def inv(self) -> "MatrixField":
        return MatrixField(self.grid, np.linalg.inv(self.values))

    def transpose(self) -> "MatrixField":
        return MatrixField(self.grid, np.swapaxes(self.values, 1, 2))

    def __matmul__(self, other) -> "MatrixField":
        if isinstance(other, MatrixField):
            return MatrixField(self.grid, self.values @ other.values)
        return MatrixField(self.grid, self.values @ np.asarray(other, dtype=float))

    def __rmatmul__(self, other) -> "MatrixField":
        return MatrixField(self.grid, np.asarray(other, dtype=float) @ self.values)

    def __add__(self, other) -> "MatrixField":
        o = other.values if isinstance(other, MatrixField) else np.asarray(other, dtype=float)
        return MatrixField(self.grid, self.values + o)

    def __sub__(self, other) -> "MatrixField":
        o = other.values if isinstance(other, MatrixField) else np.asarray(other, dtype=float)
        return MatrixField(self.grid, self.values - o)

    def __neg__(self) -> "MatrixField":
        return MatrixField(self.grid, -self.values)

    def scale(self, s: float) -> "MatrixField":
        return MatrixField(self.grid, s * self.values)

    def __repr__(self) -> str:
        return f"MatrixField(n={self.n}, grid={self.grid})"


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def gradient_array(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Per-axis derivatives of node data whose first axis runs over nodes.

    Second-order centred differences inside, second-order one-sided at the
    boundary.  Returned list is ordered ``[d/dx]`` or ``[d/dx, d/dy]``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n_nodes:
        raise DimensionError("first axis must run over grid nodes")
    trailing = values.shape[1:]
    shaped = values.reshape(grid.shape + trailing)
    h = grid.h
    if grid.dim == 1:
        return [np.gradient(shaped, h, axis=0, edge_order=2).reshape(values.shape)]
    d_dy = np.gradient(shaped, h, axis=0, edge_order=2).reshape(values.shape)
    d_dx = np.gradient(shaped, h, axis=1, edge_order=2).reshape(values.shape)
    return [d_dx, d_dy]


def gradient(f: ScalarField) -> list[ScalarField]:
    """Gradient of a scalar field as a list of per-axis fields."""
    return [ScalarField(f.grid, g) for g in gradient_array(f.values, f.grid)]


def matrix_gradient(M: MatrixField) -> list[MatrixField]:
    """Entrywise per-axis derivatives of a matrix field."""
    return [MatrixField(M.grid, g) for g in gradient_array(M.values, M.grid)]


def iter_nodes(grid: Grid) -> Iterable[int]:
    return range(grid.n_nodes)
