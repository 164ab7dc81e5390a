"""Finite-difference assembly of -div(A DW) + B DW + kW - KW on a grid.

Homogeneous Dirichlet conditions are imposed by elimination: only interior
nodes carry unknowns, and couplings to boundary nodes are dropped (the
boundary values are zero).  System unknowns are component-major.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, EllipticityError
from .field_model import Grid, MatrixField, ScalarField, VectorField

__all__ = [
    "PecletWarning",
    "Problem",
    "DiscreteOperator",
    "assemble_system",
    "assemble_scalar",
    "apply",
]


class PecletWarning(UserWarning):
    """Mesh Peclet number above 1: centred convection may lose monotonicity."""


def _as_matrix_field(value, grid: Grid, m: Optional[int] = None) -> MatrixField:
    if isinstance(value, MatrixField):
        M = value
    elif isinstance(value, np.ndarray) and value.ndim == 3:
        M = MatrixField(grid, value)
    else:
        arr = value
        if isinstance(arr, (list, tuple)) and any(isinstance(e, str) for row in arr for e in row):
            M = MatrixField.from_entries(arr, grid)
        else:
            M = MatrixField.constant(np.asarray(arr, dtype=float), grid)
    if M.grid != grid:
        raise DimensionError("matrix field lives on a different grid")
    if m is not None and M.n != m:
        raise DimensionError(f"expected a {m}x{m} matrix field, got {M.n}x{M.n}")
    return M


@dataclass(frozen=True)
class Problem:
    """Data of ``-div(A DW) + B DW + kW - KW = F`` with ``W = 0`` on the boundary.

    Parameters
    ----------
    grid : Grid
    A : MatrixField
        Diffusion matrix.
    K : MatrixField
        Zeroth-order coupling matrix (subtracted).
    k : float
        Diagonal shift.
    F : VectorField
        Right-hand side.
    B : list of MatrixField, optional
        One convection matrix per axis; ``None`` means no first-order term.
    """

    grid: Grid
    A: MatrixField
    K: MatrixField
    k: float
    F: VectorField
    B: Optional[tuple] = None
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, grid: Grid, A, K=None, k: float = 0.0, F=None, B=None,
              meta: Optional[dict] = None) -> "Problem":
        """Coerce nested lists, arrays or expression strings into a Problem."""
        A = _as_matrix_field(A, grid)
        m = A.n
        K = _as_matrix_field(np.zeros((m, m)) if K is None else K, grid, m)
        if F is None:
            F = VectorField(grid, np.zeros((m, grid.n_nodes)))
        elif not isinstance(F, VectorField):
            F = VectorField.from_exprs(list(F), grid)
        if B is not None:
            if isinstance(B, MatrixField) or (isinstance(B, np.ndarray) and B.ndim == 3):
                B = [B]
            B = tuple(_as_matrix_field(b, grid, m) for b in B)
            if len(B) != grid.dim:
                raise DimensionError(f"B needs one matrix per axis ({grid.dim})")
        return cls(grid, A, K, float(k), F, B, dict(meta or {}))

    def __post_init__(self) -> None:
        m = self.A.n
        if self.K.n != m or self.F.m != m:
            raise DimensionError("A, K and F must share the system size")
        for M in (self.A, self.K):
            if M.grid != self.grid:
                raise DimensionError("all fields must live on the problem grid")
        if self.F.grid != self.grid:
            raise DimensionError("F lives on a different grid")

    @property
    def m(self) -> int:
        return self.A.n

    def replace(self, **changes) -> "Problem":
        kw = dict(grid=self.grid, A=self.A, K=self.K, k=self.k, F=self.F, B=self.B, meta=self.meta)
        kw.update(changes)
        return Problem(**kw)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse operator on the interior unknowns of a grid.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
        Size ``m * n_interior`` square.
    grid : Grid
    m : int
        Number of components.
    symmetric : bool
        True when the first-order term is absent and the assembled
        matrix is symmetric.
    """

    matrix: sp.csr_matrix
    grid: Grid
    m: int = 1
    symmetric: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def block(self, i: int, j: int) -> sp.csr_matrix:
        """The (i, j) component block."""
        N = self.grid.n_interior
        return self.matrix[i * N:(i + 1) * N, j * N:(j + 1) * N]

    def shifted(self, c: float) -> "DiscreteOperator":
        """Operator plus ``c`` times the identity."""
        mat = (self.matrix + c * sp.identity(self.size, format="csr")).tocsr()
        return DiscreteOperator(mat, self.grid, self.m, self.symmetric)

    def __add__(self, other: "DiscreteOperator") -> "DiscreteOperator":
        if other.grid != self.grid or other.m != self.m:
            raise DimensionError("operators do not match")
        return DiscreteOperator((self.matrix + other.matrix).tocsr(), self.grid, self.m,
                                self.symmetric and other.symmetric)


# ---------------------------------------------------------------------------
# stencil building blocks (interior indexing)
# ---------------------------------------------------------------------------


def _neighbours(grid: Grid, axis: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Interior rows and full-grid neighbour indices along ``axis``."""
    nodes = grid.interior_nodes
    stride = 1 if axis == 0 else grid.n_cells + 1
    return np.arange(grid.n_interior), nodes + step * stride


def _diffusion_triplets(grid: Grid, a: np.ndarray):
    """Flux-form triplets of ``-div(a D.)`` for node values ``a``.

    Half-node coefficients are arithmetic means of the two adjacent nodes.
    """
    h2 = grid.h ** 2
    f2i = grid.full_to_interior
    nodes = grid.interior_nodes
    rows, cols, vals = [], [], []
    diag = np.zeros(grid.n_interior)
    for axis in range(grid.dim):
        for step in (-1, 1):
            r, nb = _neighbours(grid, axis, step)
            a_half = 0.5 * (a[nodes] + a[nb])
            diag += a_half / h2
            inside = f2i[nb] >= 0
            rows.append(r[inside])
            cols.append(f2i[nb][inside])
            vals.append(-a_half[inside] / h2)
    rows.append(np.arange(grid.n_interior))
    cols.append(np.arange(grid.n_interior))
    vals.append(diag)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _convection_triplets(grid: Grid, b_axis: Sequence[np.ndarray]):
    """Centred-difference triplets of ``b . D.`` (one node array per axis)."""
    f2i = grid.full_to_interior
    nodes = grid.interior_nodes
    rows, cols, vals = [], [], []
    for axis, b in enumerate(b_axis):
        if b is None:
            continue
        for step in (-1, 1):
            r, nb = _neighbours(grid, axis, step)
            coef = step * b[nodes] / (2.0 * grid.h)
            inside = (f2i[nb] >= 0) & (coef != 0.0)
            rows.append(r[inside])
            cols.append(f2i[nb][inside])
            vals.append(coef[inside])
    if not rows:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _peclet_check(grid: Grid, a: np.ndarray, b_axis, label: str) -> None:
    nodes = grid.interior_nodes
    for b in b_axis:
        if b is None:
            continue
        pe = np.abs(b[nodes]) * grid.h / (2.0 * np.abs(a[nodes]))
        if np.max(pe, initial=0.0) > 1.0:
            warnings.warn(f"mesh Peclet number {np.max(pe):.3g} > 1 in {label}",
                          PecletWarning, stacklevel=3)


def assemble_scalar(a: ScalarField, b_vec: Optional[Sequence[ScalarField]],
                    c: Optional[ScalarField], grid: Grid) -> DiscreteOperator:
    """Assemble ``-div(a D z) + b . D z + c z`` on the interior nodes.

    Parameters
    ----------
    a : ScalarField
        Diffusion coefficient, positive at every node.
    b_vec : sequence of ScalarField or None
        Convection coefficient per axis.
    c : ScalarField or None
        Zeroth-order coefficient.
    grid : Grid

    Raises
    ------
    EllipticityError
        If ``a`` is not positive at some node.
    """
    av = np.asarray(a.values)
    if np.any(av <= 0):
        bad = int(np.flatnonzero(av <= 0)[0])
        raise EllipticityError(f"diffusion coefficient is not positive at node {bad}")
    r, cidx, v = _diffusion_triplets(grid, av)
    bs = None
    if b_vec is not None:
        if len(b_vec) != grid.dim:
            raise DimensionError("b_vec needs one field per axis")
        bs = [np.asarray(b.values) for b in b_vec]
        if all(not np.any(b) for b in bs):
            bs = None
    if bs is not None:
        _peclet_check(grid, av, bs, "scalar operator")
        r2, c2, v2 = _convection_triplets(grid, bs)
        r, cidx, v = np.concatenate([r, r2]), np.concatenate([cidx, c2]), np.concatenate([v, v2])
    if c is not None:
        N = grid.n_interior
        r = np.concatenate([r, np.arange(N)])
        cidx = np.concatenate([cidx, np.arange(N)])
        v = np.concatenate([v, grid.to_interior(c.values)])
    N = grid.n_interior
    mat = sp.coo_matrix((v, (r, cidx)), shape=(N, N)).tocsr()
    mat.sum_duplicates()
    return DiscreteOperator(mat, grid, 1, bs is None)


def assemble_system(p: Problem) -> DiscreteOperator:
    """Assemble the block operator of ``p`` in component-major ordering.

    Each pair (i, j) contributes ``-div(a_ij D w_j)`` in flux form plus
    ``b_ij . D w_j`` by centred differences; ``k delta_ij - K_ij`` acts
    nodewise.

    Raises
    ------
    EllipticityError
        If the symmetric part of ``A`` is not positive definite everywhere
        (or, with ``p.meta["ellipticity"] == "spectral"``, if some
        eigenvalue of ``A`` has nonpositive real part).
    """
    from .matrix_structure import ellipticity_margin

    grid, m = p.grid, p.m
    margin = ellipticity_margin(p.A, p.meta.get("ellipticity", "quadratic"))
    if not margin > 0:
        raise EllipticityError(f"diffusion matrix is not elliptic (margin {margin:.3g})")
    N = grid.n_interior
    rows, cols, vals = [], [], []
    A = p.A.values
    has_b = p.B is not None and any(np.any(Bx.values) for Bx in p.B)
    for i in range(m):
        for j in range(m):
            aij = A[:, i, j]
            if np.any(aij):
                r, c, v = _diffusion_triplets(grid, aij)
                rows.append(r + i * N)
                cols.append(c + j * N)
                vals.append(v)
            if has_b:
                b_axis = [Bx.values[:, i, j] for Bx in p.B]
                if i == j:
                    _peclet_check(grid, A[:, i, i], b_axis, f"component {i}")
                r, c, v = _convection_triplets(grid, b_axis)
                rows.append(r + i * N)
                cols.append(c + j * N)
                vals.append(v)
            z = grid.to_interior(p.K.values[:, i, j])
            z = (p.k if i == j else 0.0) - z
            if np.any(z):
                idx = np.arange(N)
                rows.append(idx + i * N)
                cols.append(idx + j * N)
                vals.append(z)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(m * N, m * N)).tocsr()
    mat.sum_duplicates()
    symmetric = (not has_b) and abs(mat - mat.T).max() <= 1e-12 * max(abs(mat).max(), 1.0)
    return DiscreteOperator(mat, grid, m, bool(symmetric))


def apply(op: DiscreteOperator, W: Union[VectorField, ScalarField]) -> VectorField:
    """Apply ``op`` to the interior values of ``W`` (boundary values of the
    result are zero)."""
    if isinstance(W, ScalarField):
        W = VectorField(W.grid, W.values[None, :])
    if W.grid != op.grid or W.m != op.m:
        raise DimensionError("field does not match operator")
    out = op.matrix @ W.interior_flat()
    return VectorField.from_interior(op.grid, out, op.m)
