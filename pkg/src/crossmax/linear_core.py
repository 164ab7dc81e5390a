"""Sparse solves, principal eigenpairs and discrete Green functions."""

from __future__ import annotations

import functools
import weakref
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete_operator import DiscreteOperator
from .errors import ConvergenceError, DimensionError, PositivityError, PreconditionError, SingularityError, SolverError
from .field_model import Grid, VectorField, gradient_array

__all__ = [
    "EigenPair",
    "GreenColumns",
    "GreenSignReport",
    "factorize",
    "solve",
    "solve_flat",
    "principal_eigenpair",
    "default_sources",
    "green_columns",
    "green_sign_condition",
]

PIVOT_RATIO_MIN = 1e-13
RESIDUAL_RTOL = 1e-10
GMRES_RTOL = 1e-12

_factor_cache: "weakref.WeakKeyDictionary[DiscreteOperator, spla.SuperLU]" = weakref.WeakKeyDictionary()


def factorize(op: DiscreteOperator) -> spla.SuperLU:
    """Sparse LU factorization of ``op``, cached per operator object.

    Raises
    ------
    SingularityError
        If the factorization is exactly singular or its pivots span more
        than 13 orders of magnitude.
    """
    lu = _factor_cache.get(op)
    if lu is not None:
        return lu
    try:
        lu = spla.splu(op.matrix.tocsc())
    except RuntimeError as exc:
        raise SingularityError(f"operator is singular: {exc}", "operator") from exc
    piv = np.abs(lu.U.diagonal())
    if piv.size and (piv.min() == 0 or piv.min() / piv.max() < PIVOT_RATIO_MIN):
        raise SingularityError(
            f"operator is numerically singular (pivot ratio {piv.min() / piv.max():.2e})", "operator")
    _factor_cache[op] = lu
    return lu


def solve_flat(op: DiscreteOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve ``op x = rhs`` for a flat interior vector (or a matrix of them).

    Direct LU with up to three refinement steps; GMRES preconditioned by
    the LU factors is the fallback when the residual target
    ``1e-10 * |rhs|_inf`` is still missed.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != op.size:
        raise DimensionError(f"rhs has length {rhs.shape[0]}, operator size {op.size}")
    lu = factorize(op)
    A = op.matrix
    x = lu.solve(rhs)
    scale = np.max(np.abs(rhs), axis=0) if rhs.ndim > 1 else np.max(np.abs(rhs), initial=0.0)
    target = RESIDUAL_RTOL * np.maximum(scale, np.finfo(float).tiny)
    for _ in range(3):
        r = rhs - A @ x
        res = np.max(np.abs(r), axis=0) if r.ndim > 1 else np.max(np.abs(r), initial=0.0)
        if np.all(res <= target):
            return x
        x = x + lu.solve(r)
    r = rhs - A @ x
    res = np.max(np.abs(r), axis=0) if r.ndim > 1 else np.max(np.abs(r), initial=0.0)
    if np.all(res <= target):
        return x
    M = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    cols = [x] if x.ndim == 1 else [x[:, i] for i in range(x.shape[1])]
    rhs_cols = [rhs] if rhs.ndim == 1 else [rhs[:, i] for i in range(rhs.shape[1])]
    out = []
    for xc, bc in zip(cols, rhs_cols):
        sol, info = spla.gmres(A, bc, x0=xc, rtol=GMRES_RTOL, atol=0.0, M=M, maxiter=200)
        if info != 0:
            raise ConvergenceError(f"GMRES fallback did not converge (info={info})")
        if np.max(np.abs(bc - A @ sol), initial=0.0) > RESIDUAL_RTOL * max(np.max(np.abs(bc), initial=0.0), 1e-300):
            raise SolverError("solve missed its residual target after GMRES fallback")
        out.append(sol)
    return out[0] if x.ndim == 1 else np.stack(out, axis=1)


def solve(op: DiscreteOperator, rhs: VectorField) -> VectorField:
    """Solve ``op W = rhs`` on the interior nodes; ``W`` is zero on the boundary."""
    if isinstance(rhs, VectorField):
        if rhs.grid != op.grid or rhs.m != op.m:
            raise DimensionError("rhs does not match operator")
        b = rhs.interior_flat()
    else:
        b = np.asarray(rhs, dtype=float)
    return VectorField.from_interior(op.grid, solve_flat(op, b), op.m)


# ---------------------------------------------------------------------------
# principal eigenpair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenPair:
    """Principal eigenpair with ``phi`` of unit sup-norm and positive interior."""

    lambda1: float
    phi: VectorField
    iterations: int
    residual: float

    def interior(self) -> np.ndarray:
        return self.phi.interior_flat()


def principal_eigenpair(op: DiscreteOperator, max_iter: int = 500, tol: float = 1e-12) -> EigenPair:
    """Smallest eigenvalue of ``op`` and its positive eigenvector.

    Inverse power iteration from the all-ones vector.  Stops when the
    eigenvalue estimate changes by at most ``tol`` relative and the
    residual is at most ``1e-9 |lambda|``.

    Raises
    ------
    ConvergenceError
        If the iteration budget is exhausted.
    PositivityError
        If the converged vector has entries of both signs (the operator
        is then not inverse-positive).
    """
    lu = factorize(op)
    A = op.matrix
    x = np.ones(op.size)
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(x)
        x = y / np.max(np.abs(y))
        Ax = A @ x
        lam = float(x @ Ax / (x @ x))
        res = float(np.max(np.abs(Ax - lam * x)))
        if abs(lam - lam_old) <= tol * abs(lam) and res <= 1e-9 * abs(lam):
            break
        lam_old = lam
    else:
        raise ConvergenceError(f"inverse power iteration did not converge in {max_iter} steps")
    if x.sum() < 0:
        x = -x
    x = x / np.max(np.abs(x))
    if np.min(x) <= 0:
        raise PositivityError(f"principal eigenvector has nonpositive entries (min {np.min(x):.3e})")
    res = float(np.max(np.abs(A @ x - lam * x)))
    return EigenPair(lam, VectorField.from_interior(op.grid, x, op.m), it, res)


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------


def default_sources(grid: Grid, density: Optional[int] = None) -> np.ndarray:
    """Deterministic source subsample (full-grid node indices).

    1D: every ``density``-th interior node (default 2).  2D: a
    ``density x density`` lattice of interior nodes (default 8).
    """
    n = grid.n_cells
    if grid.dim == 1:
        step = 2 if density is None else int(density)
        if step < 1:
            raise PreconditionError("sample density must be >= 1")
        return np.arange(1, n, step)
    count = 8 if density is None else int(density)
    if count < 1:
        raise PreconditionError("sample density must be >= 1")
    ticks = np.unique(np.rint(np.linspace(1, n - 1, min(count, n - 1))).astype(int))
    iy, ix = np.meshgrid(ticks, ticks, indexing="ij")
    return (iy * (n + 1) + ix).reshape(-1)


@dataclass(frozen=True, eq=False)
class GreenColumns:
    """Columns ``G(., y)`` of a scalar discrete Green function.

    Attributes
    ----------
    sources : ndarray
        Full-grid node indices ``y``.
    values : ndarray, shape (n_sources, n_nodes)
        ``values[s]`` is ``G(., sources[s])`` (zero on the boundary).
    grads : list of ndarray
        Per-axis x-derivatives, each of shape (n_sources, n_nodes).
    """

    grid: Grid
    sources: np.ndarray
    values: np.ndarray
    grads: list

    def reconstruct(self, psi: np.ndarray) -> np.ndarray:
        """Quadrature ``sum_y G(x,y) psi(y) h^d`` over the source set."""
        psi = np.asarray(psi, dtype=float)
        return (psi[self.sources] @ self.values) * self.grid.h ** self.grid.dim


def green_columns(op: DiscreteOperator, sources: Optional[Sequence[int]] = None,
                  density: Optional[int] = None) -> GreenColumns:
    """Solve ``op G(., y) = delta_y / h^d`` for each source node ``y``."""
    if op.m != 1:
        raise DimensionError("Green columns need a scalar operator")
    grid = op.grid
    src = default_sources(grid, density) if sources is None else np.asarray(sources, dtype=int)
    f2i = grid.full_to_interior
    if np.any(f2i[src] < 0):
        raise PreconditionError("Green sources must be interior nodes")
    rhs = np.zeros((grid.n_interior, src.size))
    rhs[f2i[src], np.arange(src.size)] = 1.0 / grid.h ** grid.dim
    cols = solve_flat(op, rhs)
    values = grid.to_full(cols.T)
    grads = [g.T for g in gradient_array(values.T, grid)]
    return GreenColumns(grid, src, values, grads)


@dataclass
class GreenSignReport:
    """Outcome of the Green-gradient sign condition.

    ``minima[(i, j)]`` is the smallest sampled value of
    ``<c_ij(x), D_x G_j(x, y)>``; the condition holds when every minimum is
    at least ``-tolerances[(i, j)]``.
    """

    holds: bool
    minima: dict
    tolerances: dict
    failures: dict = field(default_factory=dict)
    n_sources: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        if not self.minima:
            return 0.0
        return float(min(v + self.tolerances[key] for key, v in self.minima.items()))


def green_sign_condition(c_fields: Mapping, greens: Mapping, max_failures: int = 20) -> GreenSignReport:
    """Check ``<c_ij(x), D_x G_j(x,y)> >= -tol`` for all sampled pairs.

    Parameters
    ----------
    c_fields : mapping (i, j) -> ndarray of shape (dim, n_nodes)
        Per-axis coefficient fields for ``i > j``.
    greens : mapping j -> GreenColumns
    max_failures : int
        Number of failing ``(x, y)`` node pairs recorded per ``(i, j)``.
    """
    minima, tols, failures, counts = {}, {}, {}, {}
    holds = True
    for (i, j), c in sorted(c_fields.items()):
        if j not in greens:
            raise PreconditionError(f"missing Green columns for component {j}")
        G = greens[j]
        c = np.asarray(c, dtype=float)
        if c.shape != (G.grid.dim, G.grid.n_nodes):
            raise DimensionError("coefficient field must have shape (dim, n_nodes)")
        xs = G.grid.interior_nodes
        prod = sum(c[ax][xs][None, :] * G.grads[ax][:, xs] for ax in range(G.grid.dim))
        cmax = float(np.max(np.abs(c)))
        gmax = float(max(np.max(np.abs(g)) for g in G.grads))
        tol = 1e-8 * cmax * gmax
        mn = float(np.min(prod)) if prod.size else 0.0
        minima[(i, j)], tols[(i, j)], counts[(i, j)] = mn, tol, int(G.sources.size)
        bad = np.argwhere(prod < -tol)
        if bad.size:
            holds = False
            order = np.argsort(prod[bad[:, 0], bad[:, 1]])[:max_failures]
            failures[(i, j)] = [(int(xs[bad[o, 1]]), int(G.sources[bad[o, 0]]),
                                 float(prod[bad[o, 0], bad[o, 1]])) for o in order]
    return GreenSignReport(holds, minima, tols, failures, counts)
