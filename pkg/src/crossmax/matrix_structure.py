"""Pointwise and constant matrix algebra for triangularizing transforms.

Matrix fields are handled as stacks of shape ``(n_nodes, n, n)``; plain
``(n, n)`` arrays are treated as a single-node stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError, PreconditionError, SingularityError, StructureError
from .field_model import MatrixField, matrix_gradient

__all__ = [
    "is_cooperative",
    "is_lower_triangular",
    "triangular_violation",
    "ellipticity_margin",
    "BlockInverse",
    "block_inverse",
    "DBReport",
    "db_binv_check",
    "ALTCertificate",
    "alt_membership",
    "MatrowConditions",
    "matrowconda_check",
    "TransformBundle",
    "construct_transform",
    "BlockGenResult",
    "blockgencond_check",
    "GenAResult",
    "genAcond_structure",
    "perron_root",
    "ZMDecomposition",
    "zm_decompose",
    "ProductPositivity",
    "product_positivity",
    "sign_flip_transform",
]

TOL_CONST = 1e-8
TRIANGULAR_RTOL = 1e-9

MatrixLike = Union[np.ndarray, MatrixField, Sequence[Sequence[float]]]


def _stack(M: MatrixLike) -> np.ndarray:
    if isinstance(M, MatrixField):
        return np.asarray(M.values)
    a = np.asarray(M, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise DimensionError(f"expected a square matrix, got shape {np.shape(M)}")
    return a


def _const(M: MatrixLike) -> np.ndarray:
    a = np.asarray(M, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"expected a square constant matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix has non-finite entries")
    return a


def _pattern_mask(n: int, mode: str) -> np.ndarray:
    """Mask of entries that must vanish for the given triangular mode."""
    if mode == "lower":
        return np.triu(np.ones((n, n), bool), 1)
    if mode == "upper":
        return np.tril(np.ones((n, n), bool), -1)
    if mode == "diagonal":
        return ~np.eye(n, dtype=bool)
    raise ValueError(f"unknown triangular mode {mode!r}")


def triangular_violation(M: MatrixLike, mode: str = "lower") -> float:
    """Largest magnitude of an entry outside the ``mode`` pattern."""
    S = _stack(M)
    mask = _pattern_mask(S.shape[1], mode)
    return float(np.max(np.abs(S[:, mask]), initial=0.0))


def is_lower_triangular(M: MatrixLike, tol: float = 0.0, mode: str = "lower") -> bool:
    """True iff every entry outside the ``lower`` / ``upper`` / ``diagonal``
    pattern has magnitude at most ``tol`` (at every node for a field)."""
    return triangular_violation(M, mode) <= tol


def offdiag_min(M: MatrixLike) -> float:
    S = _stack(M)
    n = S.shape[1]
    if n == 1:
        return np.inf
    return float(np.min(S[:, ~np.eye(n, dtype=bool)]))


def is_cooperative(M: MatrixLike, tol: float = 0.0) -> bool:
    """True iff every off-diagonal entry is at least ``-tol``."""
    return offdiag_min(M) >= -tol


def ellipticity_margin(A: MatrixLike, mode: str = "quadratic") -> float:
    """Ellipticity margin of a matrix field.

    ``"quadratic"``: minimum over nodes of the smallest eigenvalue of
    ``(A + A^T)/2``.  ``"spectral"``: minimum over nodes of the smallest
    real part of the eigenvalues of ``A`` (normal ellipticity for
    triangularizable systems whose symmetric part is indefinite).
    """
    S = _stack(A)
    if mode == "quadratic":
        sym = 0.5 * (S + np.swapaxes(S, 1, 2))
        return float(np.min(np.linalg.eigvalsh(sym)))
    if mode == "spectral":
        return float(np.min(np.linalg.eigvals(S).real))
    raise ValueError(f"unknown ellipticity mode {mode!r}")


# ---------------------------------------------------------------------------
# block inverse
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockInverse:
    """Blocks of the inverse of ``[[alpha, beta], [gamma, delta]]``."""

    top_left: np.ndarray
    top_right: np.ndarray
    bottom_left: np.ndarray
    bottom_right: float

    def assemble(self) -> np.ndarray:
        top = np.hstack([self.top_left, self.top_right[:, None]])
        bottom = np.hstack([self.bottom_left[None, :], [[self.bottom_right]]])
        return np.vstack([top, bottom])


def _check_invertible(M: np.ndarray, name: str, scale: float, tol: float) -> None:
    sv = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if sv.size == 0:
        return
    if sv.min() <= tol * scale:
        raise SingularityError(f"block {name!r} is singular (smallest singular value {sv.min():.3e})", name)


def block_inverse(alpha, beta, gamma, delta: float, tol: float = 1e-12) -> BlockInverse:
    """Inverse of a 2x2 block matrix with a scalar trailing block.

    Uses ``(alpha - beta gamma / delta)^{-1}`` for the leading block and the
    Schur complement ``s = delta - gamma alpha^{-1} beta`` elsewhere.

    Raises
    ------
    SingularityError
        Naming ``"alpha"``, ``"delta"`` or ``"schur"``.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.asarray(beta, dtype=float).reshape(-1)
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    delta = float(delta)
    p = alpha.shape[0]
    if alpha.shape != (p, p) or beta.shape != (p,) or gamma.shape != (p,):
        raise DimensionError("inconsistent block sizes")
    scale = max(np.max(np.abs(alpha)), np.max(np.abs(beta), initial=0.0),
                np.max(np.abs(gamma), initial=0.0), abs(delta), 1e-300)
    _check_invertible(alpha, "alpha", scale, tol)
    if abs(delta) <= tol * scale:
        raise SingularityError("block 'delta' is zero", "delta")
    ainv_beta = np.linalg.solve(alpha, beta)
    schur = delta - gamma @ ainv_beta
    if abs(schur) <= tol * scale:
        raise SingularityError(f"Schur complement vanishes ({schur:.3e})", "schur")
    top_left = np.linalg.inv(alpha - np.outer(beta, gamma) / delta)
    top_right = -ainv_beta / schur
    bottom_left = -(gamma @ top_left) / delta
    return BlockInverse(top_left, top_right, bottom_left, 1.0 / schur)


# ---------------------------------------------------------------------------
# D(B) B^{-1} pattern
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DBReport:
    """Outcome of :func:`db_binv_check`."""

    passed: bool
    residual: float
    tolerance: float
    node: int
    axis: int
    mode: str

    def __bool__(self) -> bool:
        return self.passed


def db_binv_check(B_field: MatrixField, mode: str = "lower", tol: Optional[float] = None) -> DBReport:
    """Check that ``D(B) B^{-1}`` is lower triangular (or diagonal) nodewise.

    Derivatives are second-order finite differences on the field's grid.
    The default tolerance is ``1e-8 * max(1, |DB|_max |B^{-1}|_max)``.
    """
    if mode not in ("lower", "diagonal"):
        raise ValueError("mode must be 'lower' or 'diagonal'")
    S = B_field.values
    dets = np.linalg.det(S)
    scale = np.max(np.abs(S), axis=(1, 2)) ** S.shape[1]
    bad = np.flatnonzero(np.abs(dets) <= 1e-13 * np.maximum(scale, 1e-300))
    if bad.size:
        raise SingularityError(f"matrix field is singular at node {int(bad[0])}", "B")
    Binv = np.linalg.inv(S)
    mask = _pattern_mask(S.shape[1], mode)
    worst, worst_node, worst_axis = 0.0, 0, 0
    dmax = 0.0
    for axis, DB in enumerate(matrix_gradient(B_field)):
        P = DB.values @ Binv
        dmax = max(dmax, float(np.max(np.abs(DB.values))))
        v = np.max(np.abs(P[:, mask]), axis=1, initial=0.0)
        node = int(np.argmax(v))
        if v[node] > worst:
            worst, worst_node, worst_axis = float(v[node]), node, axis
    if tol is None:
        tol = 1e-8 * max(1.0, dmax * float(np.max(np.abs(Binv))))
    return DBReport(worst <= tol, worst, float(tol), worst_node, worst_axis, mode)


# ---------------------------------------------------------------------------
# constancy helpers
# ---------------------------------------------------------------------------


def _constant_vector(samples: np.ndarray, tol_const: float):
    """Mean of per-node vectors and the relative deviation from it."""
    mean = samples.mean(axis=0)
    dev = np.max(np.abs(samples - mean), axis=tuple(range(1, samples.ndim)))
    rel = dev / max(float(np.max(np.abs(mean), initial=0.0)), 1.0)
    node = int(np.argmax(rel)) if rel.size else 0
    return mean, float(rel[node]) if rel.size else 0.0, node


# ---------------------------------------------------------------------------
# ALT(n)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ALTCertificate:
    """Constant vectors ``k_j`` with ``b_j = -a_jj k_j`` for each column ``j >= 2``.

    ``k_vectors[j-2]`` has length ``j-1`` and multiplies the diagonal entry
    ``a_jj`` to give the part of column ``j`` above the diagonal.
    """

    k_vectors: list
    residuals: list
    beta_gamma: Optional[tuple] = None


def alt_membership(A_field: MatrixLike, tol_const: float = TOL_CONST) -> ALTCertificate:
    """Certify membership of ``A`` in ALT(n).

    For each column ``j`` the part above the diagonal must be a constant
    multiple ``-k_j`` of the diagonal entry ``a_jj``, and
    ``a_j + k_j c_j`` (leading block plus outer product with the row
    left of the diagonal) must be invertible at every node.

    Raises
    ------
    StructureError
        Clause ``"k constancy"`` with the failing block index and measured
        relative variation.
    SingularityError
        Zero diagonal entry or singular ``a_j + k_j c_j``.
    """
    S = _stack(A_field)
    n = S.shape[1]
    ks, res = [], []
    for j in range(1, n):
        d = S[:, j, j]
        scale = max(float(np.max(np.abs(S))), 1e-300)
        if np.any(np.abs(d) <= 1e-14 * scale):
            node = int(np.argmin(np.abs(d)))
            raise SingularityError(f"diagonal entry a_{j + 1}{j + 1} vanishes at node {node}", f"a_{j + 1}{j + 1}")
        ksamp = -S[:, :j, j] / d[:, None]
        kbar, var, node = _constant_vector(ksamp, tol_const)
        if var > tol_const:
            raise StructureError(
                f"k_{j + 1} is not constant (relative variation {var:.3e} at node {node})",
                "k constancy", index=j, measured=var, node=node)
        M = S[:, :j, :j] + kbar[None, :, None] * S[:, j, :j][:, None, :]
        sv = np.linalg.svd(M, compute_uv=False)
        if np.any(sv[:, -1] <= 1e-12 * np.maximum(sv[:, 0], 1e-300)):
            node = int(np.argmin(sv[:, -1] / np.maximum(sv[:, 0], 1e-300)))
            raise SingularityError(f"a_{j + 1} + k c is singular at node {node}", f"block {j + 1}")
        ks.append(kbar)
        res.append(var)
    return ALTCertificate(ks, res)


# ---------------------------------------------------------------------------
# row-ratio structure with constant beta_i, gamma_i
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrowConditions:
    """Constants of the row-ratio structure.

    ``beta[i]`` relates row ``i`` to row ``i+1`` above the diagonal
    (``beta[m-1]`` is the supplied trailing value); ``gamma[i]`` relates
    row ``i`` to row ``i-1`` below it (``gamma[0]`` is unused and 0).
    ``pivots[i]`` is the minimum over nodes of ``a_ii - beta_i a_{i+1,i}``.
    ``bcycond`` is True when the positivity conditions on ``beta``,
    ``gamma`` and the ratios hold; ``ratios[i]`` lists
    ``(beta_i gamma_i - 1)/(beta_{i-1} gamma_i - 1)`` for ``i >= 1``.
    """

    beta: np.ndarray
    gamma: np.ndarray
    pivots: np.ndarray
    ratios: np.ndarray
    bcycond: bool
    degenerate: bool


def _ratio(num: np.ndarray, den: np.ndarray, tol_const: float, what: str, i: int) -> float:
    """Constant common ratio ``num/den`` across nodes and columns."""
    scale = max(float(np.max(np.abs(num), initial=0.0)), float(np.max(np.abs(den), initial=0.0)), 1e-300)
    zero_num = np.abs(num) <= 1e-14 * scale
    zero_den = np.abs(den) <= 1e-14 * scale
    if np.any(zero_den & ~zero_num):
        raise StructureError(f"{what}_{i + 1}: division by zero entry", f"{what} division by zero", index=i)
    use = ~zero_den
    if not np.any(use):
        return 0.0
    r = num[use] / den[use]
    mean = float(np.mean(r))
    var = float(np.max(np.abs(r - mean))) / max(abs(mean), 1.0)
    if var > tol_const:
        raise StructureError(f"{what}_{i + 1} is not constant (variation {var:.3e})",
                             f"{'β' if what == 'beta' else 'γ'} constancy", index=i, measured=var)
    return mean


def matrowconda_check(A_field: MatrixLike, tol_const: float = TOL_CONST, beta_last: float = 0.0,
                      require_bcycond: bool = True) -> MatrowConditions:
    """Extract constants ``beta_i, gamma_i`` with ``a_ij = beta_i a_{i+1,j}`` (j > i)
    and ``a_ij = gamma_i a_{i-1,j}`` (j < i), and check the sign conditions.

    A purely diagonal matrix is accepted as degenerate (all constants 0);
    only ``a_ii > 0`` is then required.

    Raises
    ------
    StructureError
        With the violated clause: ``"β constancy"``, ``"γ constancy"``,
        ``"β sign"``, ``"diagonal positivity"``, ``"beta-gamma product"``,
        ``"pivot positivity"`` or ``"bcycond"``.
    """
    S = _stack(A_field)
    m = S.shape[1]
    if m < 2:
        raise DimensionError("row-ratio structure needs m >= 2")
    beta = np.zeros(m)
    gamma = np.zeros(m)
    beta[m - 1] = beta_last
    for i in range(m - 1):
        beta[i] = _ratio(S[:, i, i + 1:], S[:, i + 1, i + 1:], tol_const, "beta", i)
    for i in range(1, m):
        gamma[i] = _ratio(S[:, i, :i], S[:, i - 1, :i], tol_const, "gamma", i)
    if np.any(beta < 0):
        i = int(np.flatnonzero(beta < 0)[0])
        raise StructureError(f"beta_{i + 1} = {beta[i]:.3g} is negative", "β sign", index=i, measured=beta[i])
    diag = S[:, np.arange(m), np.arange(m)]
    if np.any(diag <= 0):
        i = int(np.flatnonzero(np.any(diag <= 0, axis=0))[0])
        raise StructureError(f"a_{i + 1}{i + 1} is not positive", "diagonal positivity", index=i,
                             measured=float(diag[:, i].min()))
    off = S[:, ~np.eye(m, dtype=bool)]
    degenerate = bool(np.all(off == 0))
    for i in range(1, m):
        prod = beta[i - 1] * gamma[i]
        if not degenerate and abs(prod - 1.0) <= 1e-12:
            raise StructureError(f"beta_{i} gamma_{i + 1} = 1", "beta-gamma product", index=i, measured=prod)
    pivots = np.empty(m)
    for i in range(m - 1):
        pivots[i] = float(np.min(S[:, i, i] - beta[i] * S[:, i + 1, i]))
    pivots[m - 1] = float(np.min(S[:, m - 1, m - 1] * (1.0 - beta[m - 1] * gamma[m - 1])))
    scale = float(np.max(np.abs(S)))
    if np.any(pivots <= 1e-12 * scale):
        i = int(np.flatnonzero(pivots <= 1e-12 * scale)[0])
        raise StructureError(f"pivot a_{i + 1}{i + 1} - beta_{i + 1} a_{i + 2},{i + 1} = {pivots[i]:.3g} is not positive",
                             "pivot positivity", index=i, measured=pivots[i])
    ratios = np.full(m, np.nan)
    ok = True
    if not degenerate:
        ok = bool(np.all(beta[: m - 1] > 0) and np.all(gamma[1:] > 0))
        for i in range(1, m):
            den = beta[i - 1] * gamma[i] - 1.0
            ratios[i] = (beta[i] * gamma[i] - 1.0) / den if den != 0 else np.nan
            ok = ok and bool(np.isfinite(ratios[i]) and ratios[i] > 0)
    if require_bcycond and not ok:
        bad = [i for i in range(1, m) if not (np.isfinite(ratios[i]) and ratios[i] > 0)]
        raise StructureError(f"sign conditions on beta, gamma fail (ratios {ratios.tolist()})", "bcycond",
                             index=bad[0] if bad else None)
    return MatrowConditions(beta, gamma, pivots, ratios, ok, degenerate)


# ---------------------------------------------------------------------------
# transform construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformBundle:
    """Constant ``B`` and fields ``L``, ``L^{-1}``, ``A_d`` with
    ``B A T^{-1} = L^{-1} A_d`` nodewise.

    Attributes
    ----------
    B_mat : ndarray (n, n)
        Constant row transform.
    L_mat, L_inv : MatrixField
        Unit lower triangular factor and its inverse.
    A_d : ndarray (n_nodes, n)
        Positive diagonal of ``B A T^{-1}``.
    T_mat : ndarray or None
        Constant change of variables.
    multipliers : list
        Elimination vectors used to build ``B``.
    residual : float
        ``max_x |B A T^{-1} - L^{-1} A_d|_inf``.
    """

    B_mat: np.ndarray
    L_mat: MatrixField
    L_inv: MatrixField
    A_d: np.ndarray
    T_mat: Optional[np.ndarray] = None
    khat: Optional[list] = None
    kbar: Optional[list] = None
    structure: str = "alt"
    multipliers: list = field(default_factory=list)
    residual: float = 0.0

    @property
    def LB(self) -> MatrixField:
        """The product ``L B`` as a field."""
        return self.L_mat @ self.B_mat

    def A_d_field(self) -> MatrixField:
        n = self.A_d.shape[1]
        vals = np.zeros((self.A_d.shape[0], n, n))
        vals[:, np.arange(n), np.arange(n)] = self.A_d
        return MatrixField(self.L_mat.grid, vals)


def _eliminate_upper(S: np.ndarray, tol_const: float):
    """Constant unit upper triangular ``B`` making ``B S`` lower triangular
    by backward column elimination."""
    n = S.shape[1]
    M = S.copy()
    B = np.eye(n)
    mults = []
    scale = max(float(np.max(np.abs(S))), 1e-300)
    for j in range(n - 1, 0, -1):
        piv = M[:, j, j]
        if np.any(np.abs(piv) <= 1e-13 * scale):
            node = int(np.argmin(np.abs(piv)))
            raise SingularityError(f"elimination pivot {j + 1} vanishes at node {node}", f"pivot {j + 1}")
        ksamp = -M[:, :j, j] / piv[:, None]
        kbar, var, node = _constant_vector(ksamp, tol_const)
        if var > tol_const:
            raise StructureError(
                f"elimination multipliers for column {j + 1} are not constant "
                f"(variation {var:.3e} at node {node}); extra algebraic conditions fail",
                "extra algebraic conditions", index=j, measured=var, node=node)
        E = np.eye(n)
        E[:j, j] = kbar
        M = E @ M
        B = E @ B
        mults.insert(0, kbar)
    return B, mults


def construct_transform(A_field: MatrixField, structure: str = "alt", T_hint=None,
                        tol_const: float = TOL_CONST, beta_last: float = 0.0) -> TransformBundle:
    """Build constant ``B`` and the factorization ``B A T^{-1} = L^{-1} A_d``.

    Parameters
    ----------
    A_field : MatrixField
    structure : {"alt", "matrowconda", "blockgencond"}
        ``matrowconda`` uses the upper bidiagonal ``B`` with ``-beta_i``
        on the superdiagonal; ``alt`` eliminates columns from the right with
        constant multipliers; ``blockgencond`` first checks the block
        relations for ``T_hint`` and then eliminates on ``A T^{-1}``.
    T_hint : array_like, optional
        Constant change of variables ``T``.

    Rows of ``B`` whose pivot is negative at every node are negated so
    that ``A_d`` is positive.

    Raises
    ------
    StructureError
        Failed structure clause or nonpositive ``A_d`` entry.
    """
    grid = A_field.grid
    S = A_field.values
    n = S.shape[1]
    T = None
    khat = kbar = None
    if T_hint is not None:
        if isinstance(T_hint, MatrixField):
            if not T_hint.is_constant(0.0):
                raise PreconditionError("only constant changes of variables are supported")
            T = np.array(T_hint.values[0])
        else:
            T = _const(T_hint)
        if T.shape != (n, n):
            raise DimensionError("T must match the size of A")
    AT = S if T is None else S @ np.linalg.inv(T)
    mults: list = []
    if structure == "matrowconda":
        if T is not None and not np.allclose(T, np.eye(n)):
            raise PreconditionError("row-ratio structure is used without change of variables")
        cond = matrowconda_check(A_field, tol_const, beta_last, require_bcycond=False)
        B = np.eye(n) - np.diag(cond.beta[: n - 1], 1)
        mults = [cond.beta[: n - 1].copy()]
    elif structure == "alt":
        B, mults = _eliminate_upper(AT, tol_const)
    elif structure == "blockgencond":
        if T is None:
            raise PreconditionError("blockgencond needs a change of variables T")
        res = blockgencond_check(A_field, None, T, tol_const)
        khat, kbar = res.khat, res.kbar
        B, mults = _eliminate_upper(AT, tol_const)
    else:
        raise ValueError(f"unknown structure {structure!r}")
    P = B @ AT
    piv = P[:, np.arange(n), np.arange(n)]
    for i in range(n):
        if np.all(piv[:, i] < 0):
            B[i] = -B[i]
    P = B @ AT
    A_d = P[:, np.arange(n), np.arange(n)].copy()
    if np.any(A_d <= 0):
        i = int(np.flatnonzero(np.any(A_d <= 0, axis=0))[0])
        raise StructureError(f"A_d[{i + 1}] is not positive (min {A_d[:, i].min():.3g})",
                             "A_d positivity", index=i, measured=float(A_d[:, i].min()))
    Linv = np.tril(P) / A_d[:, None, :]
    resid = float(np.max(np.abs(P - Linv * A_d[:, None, :])))
    scale = float(np.max(np.sum(np.abs(S), axis=2)))
    if resid > TRIANGULAR_RTOL * scale:
        raise StructureError(f"B A T^-1 is not lower triangular (residual {resid:.3e})",
                             "triangularization residual", measured=resid)
    L = np.linalg.inv(Linv)
    L = np.tril(L)
    L[:, np.arange(n), np.arange(n)] = 1.0
    return TransformBundle(B, MatrixField(grid, L), MatrixField(grid, Linv), A_d, T, khat, kbar,
                           structure, mults, resid)


# ---------------------------------------------------------------------------
# block relations under a change of variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockGenResult:
    """Per leading block ``s = 2..n``: constant ``khat`` (length s-1) and
    scalar ``kbar`` entries stacked as vectors of length s-1."""

    khat: list
    kbar: list
    residuals: list


def _relation_kbar(S: np.ndarray, s: int, khat: np.ndarray) -> np.ndarray:
    a = S[:, : s - 1, : s - 1]
    b = S[:, : s - 1, s - 1]
    c = S[:, s - 1, : s - 1]
    d = S[:, s - 1, s - 1]
    den = d - c @ khat
    scale = max(float(np.max(np.abs(S))), 1e-300)
    if np.any(np.abs(den) <= 1e-14 * scale):
        node = int(np.argmin(np.abs(den)))
        raise SingularityError(f"d - <c, khat> vanishes at node {node} (block {s})", "d - c khat")
    return (b - a @ khat) / den[:, None]


def blockgencond_check(A_field: MatrixLike, B_field, T_field, tol_const: float = TOL_CONST) -> BlockGenResult:
    """Check the block relations ``-a khat + b = -<c, khat> kbar + d kbar``
    with ``beta = alpha khat`` from ``T`` for every leading block.

    The same ``(khat, kbar)`` must satisfy the relation for every axis
    matrix of ``B_field`` (if given).  The extra clause
    ``kbar (c delta - d gamma)(delta alpha - alpha khat gamma)^{-1}`` lower
    triangular is enforced.

    Raises
    ------
    StructureError
        Clauses ``"khat constancy"``, ``"kbar constancy"``,
        ``"B relation"``, ``"extra lower-triangular clause"``.
    SingularityError
        Singular ``alpha`` or vanishing denominators.
    """
    S = _stack(A_field)
    Tst = _stack(T_field)
    n = S.shape[1]
    if Tst.shape[1] != n:
        raise DimensionError("T must match the size of A")
    if Tst.shape[0] == 1 and S.shape[0] > 1:
        Tst = np.broadcast_to(Tst, S.shape)
    Bs = []
    if B_field is not None:
        for Bx in (B_field if isinstance(B_field, (list, tuple)) else [B_field]):
            Bs.append(_stack(Bx))
    khats, kbars, resids = [], [], []
    for s in range(2, n + 1):
        alpha = Tst[:, : s - 1, : s - 1]
        beta = Tst[:, : s - 1, s - 1]
        gamma = Tst[:, s - 1, : s - 1]
        delta = Tst[:, s - 1, s - 1]
        sv = np.linalg.svd(alpha, compute_uv=False)
        if np.any(sv[:, -1] <= 1e-12 * np.maximum(sv[:, 0], 1e-300)):
            raise SingularityError(f"alpha block of T is singular (block {s})", "alpha")
        kh_s = np.linalg.solve(alpha, beta[:, :, None])[:, :, 0]
        khat, var, node = _constant_vector(kh_s, tol_const)
        if var > tol_const:
            raise StructureError(f"khat is not constant in block {s} (variation {var:.3e} at node {node})",
                                 "khat constancy", index=s - 1, measured=var, node=node)
        kb_s = _relation_kbar(S, s, khat)
        kbar, var, node = _constant_vector(kb_s, tol_const)
        if var > tol_const:
            raise StructureError(
                f"no constant kbar solves the block relation in block {s} "
                f"(variation {var:.3e}, worst node {node})",
                "kbar constancy", index=s - 1, measured=var, node=node)
        for Bx in Bs:
            a = Bx[:, : s - 1, : s - 1]
            b = Bx[:, : s - 1, s - 1]
            c = Bx[:, s - 1, : s - 1]
            d = Bx[:, s - 1, s - 1]
            r = (b - a @ khat) - (d - c @ khat)[:, None] * kbar[None, :]
            rr = float(np.max(np.abs(r), initial=0.0))
            if rr > tol_const * max(float(np.max(np.abs(Bx))), 1.0):
                node = int(np.argmax(np.max(np.abs(r), axis=1)))
                raise StructureError(f"B violates the block relation in block {s} (residual {rr:.3e})",
                                     "B relation", index=s - 1, measured=rr, node=node)
        c = S[:, s - 1, : s - 1]
        d = S[:, s - 1, s - 1]
        row = c * delta[:, None] - d[:, None] * gamma
        left = kbar[None, :, None] * row[:, None, :]
        mid = delta[:, None, None] * alpha - (alpha @ khat)[:, :, None] * gamma[:, None, :]
        X = left @ np.linalg.inv(mid)
        viol = triangular_violation(X, "lower")
        if viol > TRIANGULAR_RTOL * max(float(np.max(np.abs(X))), 1.0):
            raise StructureError(f"extra clause is not lower triangular in block {s} (violation {viol:.3e})",
                                 "extra lower-triangular clause", index=s - 1, measured=viol)
        khats.append(khat)
        kbars.append(kbar)
        resids.append(var)
    return BlockGenResult(khats, kbars, resids)


# ---------------------------------------------------------------------------
# matrices reducible to ALT(n) by a prefactor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenAResult:
    """Constant vector ``k`` of the last-column relation and prefactor ``CB``.

    ``CB`` is a stack ``(n_nodes, n, n)`` with ``CB A`` in ALT(n).
    """

    k: np.ndarray
    CB: np.ndarray
    in_alt: bool


def genAcond_structure(A_field: MatrixLike, tol_const: float = TOL_CONST) -> GenAResult:
    """Check ``b = -(d - c a^{-1} b) a (a - d^{-1} b c)^{-1} k`` for a constant ``k``.

    ``a`` is the leading ``(n-1)`` block, ``b``, ``c`` the last column and
    row and ``d`` the corner.  On success, ``CB`` is the identity when
    ``A`` is already in ALT(n), else ``U^{-1}`` from a nodewise UL
    factorization ``A = U L`` (so ``CB A = L`` is lower triangular).

    Raises
    ------
    StructureError
        Clause ``"genA constancy"`` when no constant ``k`` fits.
    """
    S = _stack(A_field)
    n = S.shape[1]
    if n < 2:
        raise DimensionError("need n >= 2")
    a = S[:, : n - 1, : n - 1]
    b = S[:, : n - 1, n - 1]
    c = S[:, n - 1, : n - 1]
    d = S[:, n - 1, n - 1]
    scale = max(float(np.max(np.abs(S))), 1e-300)
    if np.any(np.abs(d) <= 1e-14 * scale):
        raise SingularityError("corner entry d vanishes", "delta")
    ainv_b = np.linalg.solve(a, b[:, :, None])[:, :, 0]
    schur = d - np.einsum("ni,ni->n", c, ainv_b)
    if np.any(np.abs(schur) <= 1e-14 * scale):
        raise SingularityError("Schur complement d - c a^-1 b vanishes", "schur")
    lead = a - b[:, :, None] * c[:, None, :] / d[:, None, None]
    ksamp = -(lead @ ainv_b[:, :, None])[:, :, 0] / schur[:, None]
    k, var, node = _constant_vector(ksamp, tol_const)
    if var > tol_const:
        raise StructureError(f"no constant k fits the last-column relation (variation {var:.3e} at node {node})",
                             "genA constancy", measured=var, node=node)
    try:
        alt_membership(S, tol_const)
        in_alt = True
    except (StructureError, SingularityError):
        in_alt = False
    if in_alt:
        CB = np.broadcast_to(np.eye(n), S.shape).copy()
    else:
        CB = np.linalg.inv(_ul_upper(S))
    return GenAResult(k, CB, in_alt)


def _ul_upper(S: np.ndarray) -> np.ndarray:
    """Unit upper triangular ``U`` with ``S = U L`` (L lower) at every node."""
    n = S.shape[1]
    J = np.eye(n)[::-1]
    # flipping rows and columns turns UL into LU
    F = J @ S @ J
    U = np.broadcast_to(np.eye(n), S.shape).copy()
    R = F.copy()
    for col in range(n - 1):
        piv = R[:, col, col]
        if np.any(np.abs(piv) <= 1e-14 * np.max(np.abs(S))):
            raise SingularityError("UL factorization breaks down", "pivot")
        f = R[:, col + 1:, col] / piv[:, None]
        U[:, col + 1:, col] = f
        R[:, col + 1:, :] -= f[:, :, None] * R[:, col, None, :]
    return J @ U @ J


# ---------------------------------------------------------------------------
# Z / M matrices
# ---------------------------------------------------------------------------


def _perron_irreducible(B: np.ndarray, tol: float, max_iter: int) -> float:
    # B + sigma I is primitive, so the Collatz-Wielandt bounds meet
    n = B.shape[0]
    sigma = 0.1 * float(np.max(B))
    S = B + sigma * np.eye(n)
    x = np.ones(n)
    lo = hi = 0.0
    for _ in range(max_iter):
        y = S @ x
        x = y / np.max(y)
        r = (B @ x) / x
        lo, hi = float(r.min()), float(r.max())
        if hi - lo <= tol * max(hi, 1e-300):
            break
    return 0.5 * (lo + hi)


def perron_root(B: np.ndarray, tol: float = 1e-13, max_iter: int = 200000) -> float:
    """Spectral radius of a nonnegative matrix by shifted power iteration.

    The radius is the largest over the irreducible diagonal blocks (strongly
    connected components of the nonzero pattern).  On each block the
    iteration runs on ``B + sigma I`` from the all-ones vector and stops when
    the Collatz-Wielandt bounds ``min (Bx)_i/x_i <= rho <= max (Bx)_i/x_i``
    agree to ``tol`` relative.
    """
    B = _const(B)
    if np.any(B < 0):
        raise PreconditionError("power iteration needs a nonnegative matrix")
    if not np.any(B):
        return 0.0
    n_comp, labels = connected_components(B > 0, directed=True, connection="strong")
    rho = 0.0
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        block = B[np.ix_(idx, idx)]
        if not np.any(block):
            continue
        rho = max(rho, float(block[0, 0]) if idx.size == 1 else _perron_irreducible(block, tol, max_iter))
    return rho


@dataclass(frozen=True)
class ZMDecomposition:
    """``P = s I - B`` with ``B >= 0`` and spectral radius ``rho < s``.

    Unpacks as ``(s, B)``.
    """

    s: float
    B: np.ndarray
    rho: float

    def __iter__(self):
        return iter((self.s, self.B))


def zm_decompose(P: MatrixLike, tol: float = 1e-14) -> ZMDecomposition:
    """Write an inverse-positive Z-matrix as ``s I - B``, ``s = max_i P_ii``.

    Raises
    ------
    StructureError
        Clauses ``"Z-matrix"``, ``"inverse positivity"`` or
        ``"spectral radius"``.
    """
    P = _const(P)
    n = P.shape[0]
    off = ~np.eye(n, dtype=bool)
    scale = max(float(np.max(np.abs(P))), 1e-300)
    if n > 1 and np.max(P[off]) > tol * scale:
        raise StructureError("P has a positive off-diagonal entry", "Z-matrix", measured=float(np.max(P[off])))
    try:
        Pinv = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("P is singular", "P") from exc
    if np.min(Pinv) < -1e-12 * max(float(np.max(np.abs(Pinv))), 1e-300):
        raise StructureError(f"P^-1 has a negative entry ({np.min(Pinv):.3g})", "inverse positivity",
                             measured=float(np.min(Pinv)))
    s = float(np.max(np.diag(P)))
    B = s * np.eye(n) - P
    B[off] = -P[off]
    B[B < 0] = np.where(np.abs(B[B < 0]) <= tol * scale, 0.0, B[B < 0])
    rho = perron_root(B)
    if not rho < s:
        raise StructureError(f"spectral radius {rho:.6g} >= s = {s:.6g}", "spectral radius", measured=rho)
    return ZMDecomposition(s, B, rho)


@dataclass(frozen=True)
class ProductPositivity:
    """Entrywise sign of ``(tI - A)(sI - B)``.

    ``sufficient_condition`` records whether all entries of ``A`` and ``B``
    exceed 2; ``unit_parameters`` whether ``t, s <= 1``, the range on
    which that condition does imply positivity.
    """

    positive: bool
    min_entry: float
    product: np.ndarray
    sufficient_condition: bool
    unit_parameters: bool

    def __bool__(self) -> bool:
        return self.positive


def product_positivity(t: float, A: MatrixLike, s: float, B: MatrixLike) -> ProductPositivity:
    """Check that every entry of ``(tI - A)(sI - B)`` is strictly positive."""
    if not (t > 0 and s > 0):
        raise PreconditionError("t and s must be positive")
    A = _const(A)
    B = _const(B)
    if A.shape != B.shape:
        raise DimensionError("A and B must have the same size")
    n = A.shape[0]
    prod = (t * np.eye(n) - A) @ (s * np.eye(n) - B)
    mn = float(np.min(prod))
    return ProductPositivity(mn > 0, mn, prod, bool(np.all(A > 2) and np.all(B > 2)),
                             bool(t <= 1 and s <= 1))


def sign_flip_transform(G: MatrixLike, k: int) -> np.ndarray:
    """Conjugate ``G`` by ``P = diag(I_k, -I_{n-k})``."""
    G = _const(G)
    n = G.shape[0]
    if not (0 < int(k) < n) or int(k) != k:
        raise PreconditionError(f"block size must satisfy 0 < k < {n}")
    d = np.concatenate([np.ones(int(k)), -np.ones(n - int(k))])
    return d[:, None] * G * d[None, :]
