"""Hypothesis checks and conclusion tests for the maximum principles.

Every verifier returns a :class:`VerificationReport`.  Hypothesis failures
never abort a run: the direct solve is always performed so that
counterexamples are reported alongside the failed clauses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .discrete_operator import DiscreteOperator, Problem, assemble_scalar, assemble_system
from .errors import CrossmaxError, DimensionError, PreconditionError, StructureError
from .field_model import Grid, MatrixField, ScalarField, VectorField, gradient_array
from .linear_core import (EigenPair, factorize, green_columns, green_sign_condition, principal_eigenpair,
                          solve, solve_flat)
from .matrix_structure import (TransformBundle, blockgencond_check, construct_transform, ellipticity_margin,
                               matrowconda_check, offdiag_min, triangular_violation)

__all__ = [
    "VERIFIED",
    "HYPOTHESES_UNMET",
    "CONCLUSION_FAILED",
    "THEOREMS",
    "HypothesisResult",
    "Conclusion",
    "VerificationReport",
    "LopezResult",
    "ConeResult",
    "PposPcoopResult",
    "positivity_verdict",
    "lopez_condition_check",
    "cone_check",
    "doubling_search",
    "verify",
    "verify_GenMPMat",
    "verify_GenMPMatT",
    "verify_strong_positivity",
    "verify_GenMPMatTKRnew",
    "build_PposPcoop",
]

log = logging.getLogger(__name__)

VERIFIED = "VERIFIED"
HYPOTHESES_UNMET = "HYPOTHESES_UNMET"
CONCLUSION_FAILED = "CONCLUSION_FAILED"

THEOREMS = ("lopez", "maxmat", "matmaxprinciple", "GenMPMat", "GenMPMatT", "GenMPMatTKR", "GenMPMatTKRnew")

K_START = 1.0
K_CAP = 2.0 ** 20
POS_RTOL = 1e-12
STRUCT_RTOL = 1e-9


# ---------------------------------------------------------------------------
# report types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisResult:
    """One clause of a theorem: pass/fail with a finite signed margin."""

    name: str
    passed: bool
    margin: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "margin": _finite(self.margin),
                "detail": self.detail}


@dataclass(frozen=True)
class Conclusion:
    """Positivity verdict on a (transformed) solution.

    ``positive`` means every component exceeds ``tol_pos`` at interior
    nodes at graph distance >= 2 from the boundary and is at least
    ``-tol_pos`` at every interior node.
    """

    positive: bool
    min_value: float
    min_deep: float
    location: tuple
    tol_pos: float
    margin: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"positive": bool(self.positive), "min_value": _finite(self.min_value),
                "min_deep": _finite(self.min_deep), "location": list(self.location),
                "tol_pos": _finite(self.tol_pos), "margin": _finite(self.margin), "detail": self.detail}


@dataclass
class VerificationReport:
    """Structured outcome of a theorem check."""

    theorem: str
    status: str
    hypotheses: list
    conclusion: Optional[Conclusion]
    k_used: float
    kappa_used: Optional[float] = None
    counterexample_confirmed: bool = False
    eigen: dict = field(default_factory=dict)
    routes: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    solution: Optional[VectorField] = field(default=None, repr=False)

    @property
    def verified(self) -> bool:
        return self.status == VERIFIED

    @property
    def hypotheses_pass(self) -> bool:
        return all(h.passed for h in self.hypotheses)

    def hypothesis(self, name: str) -> HypothesisResult:
        for h in self.hypotheses:
            if h.name == name:
                return h
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "status": self.status,
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "conclusion": None if self.conclusion is None else self.conclusion.to_dict(),
            "k_used": _finite(self.k_used),
            "kappa_used": None if self.kappa_used is None else _finite(self.kappa_used),
            "counterexample_confirmed": bool(self.counterexample_confirmed),
            "eigen": _jsonable(self.eigen),
            "routes": {name: [h.to_dict() for h in hs] for name, hs in self.routes.items()},
            "notes": list(self.notes),
        }


def _finite(x) -> float:
    x = float(x)
    if np.isnan(x):
        return 0.0
    if np.isinf(x):
        return float(np.sign(x) * np.finfo(float).max)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(obj)
    return obj


def _status(hyps: Sequence[HypothesisResult], conclusion: Optional[Conclusion]) -> str:
    if not all(h.passed for h in hyps):
        return HYPOTHESES_UNMET
    if conclusion is None or not conclusion.positive:
        return CONCLUSION_FAILED
    return VERIFIED


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def _nodewise(M, grid: Grid, n: int) -> np.ndarray:
    """Coerce a constant matrix or field into an ``(n_nodes, n, n)`` stack."""
    if isinstance(M, MatrixField):
        vals = M.values
    else:
        a = np.asarray(M, dtype=float)
        if a.ndim == 2:
            vals = np.broadcast_to(a, (grid.n_nodes,) + a.shape)
        elif a.ndim == 3:
            vals = a
        else:
            raise DimensionError("expected a matrix or matrix field")
    if vals.shape != (grid.n_nodes, n, n):
        raise DimensionError(f"expected {n}x{n} matrices on {grid.n_nodes} nodes, got {vals.shape}")
    return vals


def _constant_T(T, n: int) -> np.ndarray:
    if T is None:
        return np.eye(n)
    if isinstance(T, MatrixField):
        if not T.is_constant(0.0):
            raise PreconditionError("only constant changes of variables are supported")
        return np.array(T.values[0])
    a = np.asarray(T, dtype=float)
    if a.shape != (n, n):
        raise DimensionError("T must be an n x n matrix")
    return a


def _apply_nodewise(M: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``(M v)(x)`` for ``M`` of shape (N, m, m) and ``values`` of shape (m, N)."""
    return np.einsum("nij,jn->in", M, values)


def doubling_search(predicate, start: float = K_START, cap: float = K_CAP):
    """First value in ``start, 2 start, 4 start, ...`` (up to ``cap``) with
    ``predicate(value)`` true; ``None`` if there is none."""
    k = float(start)
    while k <= cap:
        if predicate(k):
            return k
        k *= 2.0
    return None


def positivity_verdict(W: VectorField, T=None, tol_pos: Optional[float] = None,
                       strict_all: bool = False) -> Conclusion:
    """Test ``T W >> 0`` on the grid.

    Components must exceed ``tol_pos`` at interior nodes at distance >= 2
    from the boundary and be at least ``-tol_pos`` at every interior node
    (or exceed ``tol_pos`` everywhere inside when ``strict_all``).  The
    default ``tol_pos`` is ``1e-12 * max |T W|``.
    """
    grid = W.grid
    V = W.values if T is None else _apply_nodewise(_nodewise(T, grid, W.m), W.values)
    inner = grid.interior_nodes
    dist = grid.boundary_distance[inner]
    deep = inner[dist >= 2] if np.any(dist >= 2) else inner
    scale = float(np.max(np.abs(V), initial=0.0))
    tol = POS_RTOL * scale if tol_pos is None else float(tol_pos)
    Vi = V[:, inner]
    comp, idx = np.unravel_index(int(np.argmin(Vi)), Vi.shape)
    min_all = float(Vi[comp, idx])
    min_deep = float(np.min(V[:, deep]))
    if strict_all:
        positive = min_all > tol
        margin = min_all - tol
    else:
        positive = min_deep > tol and min_all >= -tol
        margin = min(min_deep - tol, min_all + tol)
    return Conclusion(bool(positive), min_all, min_deep, (int(comp), int(inner[idx])), tol, margin)


# ---------------------------------------------------------------------------
# Lopez condition and cone
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LopezResult:
    """Outcome of ``(lambda_i + k) psi_i > sum_j K_ij psi_j`` at interior nodes.

    ``k_threshold`` is the smallest shift making every strict inequality
    hold (the condition is affine in ``k``).
    """

    holds: bool
    margin: float
    k_threshold: float
    margins: np.ndarray
    eigenpairs: list

    @property
    def lambdas(self) -> list:
        return [ep.lambda1 for ep in self.eigenpairs]


def _lopez_terms(eigenpairs: Sequence[EigenPair], K: np.ndarray, grid: Grid):
    m = len(eigenpairs)
    inner = grid.interior_nodes
    psi = np.stack([ep.phi.values[0][inner] for ep in eigenpairs])
    lam = np.array([ep.lambda1 for ep in eigenpairs])
    Kn = K[inner]
    rhs = np.einsum("nij,jn->in", Kn, psi)
    if Kn.shape[1:] != (m, m):
        raise DimensionError("K does not match the number of scalar operators")
    return lam, psi, rhs


def lopez_condition_check(scalar_ops: Sequence[DiscreteOperator], K, k: float,
                          eigenpairs: Optional[Sequence[EigenPair]] = None) -> LopezResult:
    """Check ``(lambda_i + k) psi_i > sum_j K_ij psi_j`` at every interior node.

    Parameters
    ----------
    scalar_ops : sequence of scalar operators ``L_i``
    K : (m, m) matrix or (n_nodes, m, m) field
    k : float
    eigenpairs : optional precomputed principal eigenpairs of ``scalar_ops``
    """
    if eigenpairs is None:
        eigenpairs = [principal_eigenpair(op) for op in scalar_ops]
    grid = eigenpairs[0].phi.grid
    m = len(eigenpairs)
    Kv = _nodewise(K, grid, m)
    lam, psi, rhs = _lopez_terms(eigenpairs, Kv, grid)
    diff = (lam[:, None] + k) * psi - rhs
    scale = max(float(np.max(np.abs(rhs), initial=0.0)), float(np.max((np.abs(lam[:, None]) + abs(k)) * psi)))
    tol = POS_RTOL * max(scale, 1e-300)
    margins = diff.min(axis=1)
    threshold = float(np.max(rhs / psi - lam[:, None]))
    return LopezResult(bool(np.all(diff > tol)), float(margins.min()), threshold, margins, list(eigenpairs))


@dataclass(frozen=True)
class ConeResult:
    """Outcome of ``(LB F)(x) >> 0`` at interior nodes."""

    holds: bool
    margin: float
    location: tuple
    values: np.ndarray


def cone_check(F: VectorField, LB, tol: Optional[float] = None) -> ConeResult:
    """True iff every component of ``LB F`` is strictly positive at every
    interior node (``> tol``, default ``1e-12 * max |LB F|``)."""
    grid = F.grid
    G = _apply_nodewise(_nodewise(LB, grid, F.m), F.values)
    inner = grid.interior_nodes
    Gi = G[:, inner]
    comp, idx = np.unravel_index(int(np.argmin(Gi)), Gi.shape)
    mn = float(Gi[comp, idx])
    if tol is None:
        tol = POS_RTOL * float(np.max(np.abs(Gi), initial=0.0))
    return ConeResult(mn > tol, mn, (int(comp), int(inner[idx])), G)


# ---------------------------------------------------------------------------
# transformed coefficients
# ---------------------------------------------------------------------------


@dataclass
class _Transformed:
    bundle: TransformBundle
    T: np.ndarray
    LB: np.ndarray          # (N, m, m)
    LBT: np.ndarray         # L B T^{-1}
    N0: np.ndarray          # L B K T^{-1}
    C_axes: list            # per axis (N, m, m)

    def N(self, k: float) -> np.ndarray:
        """Reaction coupling ``L B (K - k I) T^{-1}`` of the transformed system."""
        return self.N0 - k * self.LBT

    def C_stack(self) -> np.ndarray:
        return np.concatenate(self.C_axes, axis=0)


def _transformed(p: Problem, bundle: TransformBundle, T: np.ndarray) -> _Transformed:
    grid, m = p.grid, p.m
    Tinv = np.linalg.inv(T)
    L = bundle.L_mat.values
    LB = L @ bundle.B_mat
    LBT = LB @ Tinv
    N0 = LB @ p.K.values @ Tinv
    Ad = np.zeros((grid.n_nodes, m, m))
    Ad[:, np.arange(m), np.arange(m)] = bundle.A_d
    C_axes = []
    dLinv = gradient_array(bundle.L_inv.values, grid)
    for ax in range(grid.dim):
        C = L @ dLinv[ax] @ Ad
        if p.B is not None:
            C = C - LB @ p.B[ax].values @ Tinv
        C_axes.append(C)
    return _Transformed(bundle, T, LB, LBT, N0, C_axes)


def _comparison_op(tr: _Transformed, grid: Grid, i: int, c: Optional[np.ndarray]) -> DiscreteOperator:
    """Scalar operator ``-div(A_d,i D) - c_ii . D + c`` of the transformed system."""
    a = ScalarField(grid, tr.bundle.A_d[:, i])
    b = [ScalarField(grid, -C[:, i, i]) for C in tr.C_axes]
    if not any(np.any(bb.values) for bb in b):
        b = None
    cc = None if c is None else ScalarField(grid, c)
    return assemble_scalar(a, b, cc, grid)


def _scale(*arrays) -> float:
    return max([float(np.max(np.abs(a), initial=0.0)) for a in arrays] + [1.0])


# ---------------------------------------------------------------------------
# routes for the lower-order coupling
# ---------------------------------------------------------------------------


def _route_triangular(tr: _Transformed, grid: Grid, k: float, density, with_green: bool = True) -> list:
    """Induction route: triangular coupling plus the Green-gradient condition."""
    m = tr.LB.shape[1]
    N = tr.N(k)
    out = []
    tol_n = STRUCT_RTOL * _scale(tr.N0, k * tr.LBT)
    up = triangular_violation(N, "lower")
    out.append(HypothesisResult("reaction lower triangular", up <= tol_n, tol_n - up))
    low = np.tril(np.ones((m, m), bool), -1)
    lower_min = float(np.min(N[:, low])) if m > 1 else 0.0
    out.append(HypothesisResult("reaction sign", lower_min >= -tol_n, lower_min + tol_n,
                                "off-diagonal entries of L B (K - k I) T^-1 below the diagonal"))
    zdiag = float(np.min(-N[:, np.arange(m), np.arange(m)]))
    out.append(HypothesisResult("comparison zeroth order", zdiag >= -tol_n, zdiag + tol_n,
                                "diagonal of L B (k I - K) T^-1"))
    Cs = tr.C_stack()
    tol_c = STRUCT_RTOL * _scale(Cs)
    cup = triangular_violation(Cs, "lower")
    out.append(HypothesisResult("C lower triangular", cup <= tol_c, tol_c - cup))
    if not with_green or not all(h.passed for h in out):
        out.append(HypothesisResult("Green sign condition", False, -1.0, "not evaluated"))
        return out
    c_fields = {}
    for i in range(m):
        for j in range(i):
            c = np.stack([C[:, i, j] for C in tr.C_axes])
            if np.max(np.abs(c)) > tol_c:
                c_fields[(i, j)] = c
    if not c_fields:
        out.append(HypothesisResult("Green sign condition", True, 0.0, "all c_ij vanish"))
        return out
    greens = {}
    for j in sorted({j for (_, j) in c_fields}):
        op = _comparison_op(tr, grid, j, -N[:, j, j])
        greens[j] = green_columns(op, density=density)
    rep = green_sign_condition(c_fields, greens)
    detail = f"sources per component: {sorted(set(rep.n_sources.values()))}"
    out.append(HypothesisResult("Green sign condition", rep.holds, rep.margin, detail))
    return out


def _route_weak_coupling(tr: _Transformed, grid: Grid, k: float, eigenpairs) -> list:
    """Weakly coupled route: diagonal C, cooperative reaction and the Lopez condition."""
    m = tr.LB.shape[1]
    N = tr.N(k)
    out = []
    Cs = tr.C_stack()
    tol_c = STRUCT_RTOL * _scale(Cs)
    off = triangular_violation(Cs, "diagonal")
    out.append(HypothesisResult("C diagonal", off <= tol_c, tol_c - off))
    tol_n = STRUCT_RTOL * _scale(tr.N0, k * tr.LBT)
    om = offdiag_min(N) if m > 1 else 0.0
    out.append(HypothesisResult("reaction cooperative", om >= -tol_n, om + tol_n))
    K_eff = N + k * np.eye(m)
    lr = lopez_condition_check(None, K_eff, k, eigenpairs)
    out.append(HypothesisResult("Lopez condition", lr.holds, lr.margin,
                                f"threshold k = {lr.k_threshold:.6g}"))
    return out


def _passes(hs: Sequence[HypothesisResult]) -> bool:
    return all(h.passed for h in hs)


# ---------------------------------------------------------------------------
# maximum principle verifiers
# ---------------------------------------------------------------------------


def _hyp_from_error(name: str, exc: Exception) -> HypothesisResult:
    measured = getattr(exc, "measured", None)
    margin = -abs(float(measured)) if measured is not None and np.isfinite(measured) and measured != 0 else -1.0
    clause = getattr(exc, "clause", "")
    detail = f"{type(exc).__name__}: {exc}" + (f" [clause: {clause}]" if clause else "")
    return HypothesisResult(name, False, margin, detail)


def _solve_and_judge(p: Problem, k_used: float, T: Optional[np.ndarray], tol_pos):
    try:
        op = assemble_system(p.replace(k=k_used))
        W = solve(op, p.F)
    except CrossmaxError as exc:
        return None, Conclusion(False, np.nan, np.nan, (0, 0), 0.0, -1.0, f"{type(exc).__name__}: {exc}")
    return W, positivity_verdict(W, T, tol_pos)


def _rhs_positive(F: VectorField) -> bool:
    inner = F.grid.interior_nodes
    return bool(np.min(F.values[:, inner]) > 0)


def _run_pipeline(p: Problem, theorem: str, T: Optional[np.ndarray], k, structure: str,
                  tol_pos, density, pre_hyps: Sequence[HypothesisResult], with_green: bool) -> VerificationReport:
    grid, m = p.grid, p.m
    hyps = list(pre_hyps)
    notes: list = []
    em = ellipticity_margin(p.A, p.meta.get("ellipticity", "quadratic"))
    hyps.append(HypothesisResult("ellipticity", em > 0, em, p.meta.get("ellipticity", "quadratic")))
    tr = None
    try:
        bundle = construct_transform(p.A, structure, T_hint=T if T is not None and not np.allclose(T, np.eye(m)) else None)
        tr = _transformed(p, bundle, np.eye(m) if T is None else T)
        hyps.append(HypothesisResult("constant transform", True, float(np.min(bundle.A_d)),
                                     f"structure {structure}, residual {bundle.residual:.3e}"))
    except CrossmaxError as exc:
        hyps.append(_hyp_from_error("constant transform", exc))

    routes: dict = {}
    eigen: dict = {}
    k_auto = isinstance(k, str)
    k_used = float(p.k) if k_auto else float(k)
    if tr is not None:
        cone = cone_check(p.F, tr.LB)
        hyps.append(HypothesisResult("cone", cone.holds, cone.margin,
                                     f"min of L B F at component {cone.location[0]}, node {cone.location[1]}"))
        eigenpairs = None
        Cs = tr.C_stack()
        if triangular_violation(Cs, "diagonal") <= STRUCT_RTOL * _scale(Cs):
            try:
                eigenpairs = [principal_eigenpair(_comparison_op(tr, grid, i, None)) for i in range(m)]
                eigen["comparison_lambdas"] = [ep.lambda1 for ep in eigenpairs]
            except CrossmaxError as exc:
                notes.append(f"comparison eigenpairs unavailable: {exc}")

        def evaluate(kk: float, green: bool):
            r = {"triangular": _route_triangular(tr, grid, kk, density, green)}
            if eigenpairs is not None:
                r["weak_coupling"] = _route_weak_coupling(tr, grid, kk, eigenpairs)
            return r

        if k_auto:
            def cheap_ok(kk):
                r = evaluate(kk, False)
                ok_tri = _passes(r["triangular"][:-1])
                return ok_tri or ("weak_coupling" in r and _passes(r["weak_coupling"]))

            def full_ok(kk):
                if not cheap_ok(kk):
                    return False
                r = evaluate(kk, with_green)
                return any(_passes(v) for v in r.values())

            found = doubling_search(full_ok)
            if found is None:
                notes.append(f"no k in [{K_START:g}, {K_CAP:g}] satisfies the lower-order clauses")
            else:
                k_used = found
        routes = evaluate(k_used, with_green)
        ok = any(_passes(v) for v in routes.values())
        best = max(routes.values(), key=lambda hs: (sum(h.passed for h in hs), min(h.margin for h in hs)))
        chosen = next((name for name, hs in routes.items() if _passes(hs)), None)
        hyps.append(HypothesisResult("lower-order coupling", ok, min(h.margin for h in best),
                                     f"route {chosen}" if chosen else
                                     "failed: " + ", ".join(h.name for h in best if not h.passed)))
    W, concl = _solve_and_judge(p, k_used, T, tol_pos)
    hyps_ok = _passes(hyps)
    confirmed = (not hyps_ok) and W is not None and _rhs_positive(p.F) and concl.min_value < -concl.tol_pos
    return VerificationReport(theorem, _status(hyps, concl), hyps, concl, k_used, None, bool(confirmed),
                              eigen, routes, notes, W)


def verify_GenMPMat(p: Problem, k: Union[str, float] = "auto", structure: str = "alt",
                    tol_pos: Optional[float] = None, sample_density: Optional[int] = None,
                    theorem: str = "GenMPMat") -> VerificationReport:
    """Maximum principle for systems triangularized by a constant row transform.

    Pipeline: constant ``B`` with ``B A = L^{-1} A_d``; cone ``L B F >> 0``;
    lower-order coupling by either the triangular route (reaction lower
    triangular with nonnegative coupling, ``C`` lower triangular and the
    Green-gradient sign condition) or the weakly coupled route (``C``
    diagonal, cooperative reaction and the Lopez condition); direct solve
    and positivity test of ``W``.

    Parameters
    ----------
    k : "auto" or float
        ``"auto"`` doubles ``k`` from 1 until the lower-order clauses hold.
    structure : {"alt", "matrowconda"}
    """
    return _run_pipeline(p, theorem, None, k, structure, tol_pos, sample_density, [], True)


def verify_GenMPMatT(p: Problem, T, k: Union[str, float] = "auto", tol_pos: Optional[float] = None,
                     sample_density: Optional[int] = None) -> VerificationReport:
    """Maximum principle after the change of variables ``v = T W``.

    The block relations for ``T`` (including the extra lower-triangular
    clause) are checked first; the pipeline of :func:`verify_GenMPMat`
    then runs on the ``v`` system and the conclusion is ``T W >> 0``.
    Only constant ``T`` is supported downstream.
    """
    m = p.m
    pre = []
    Tc = None
    try:
        blockgencond_check(p.A, p.B, T)
        pre.append(HypothesisResult("block relations", True, 0.0))
    except CrossmaxError as exc:
        pre.append(_hyp_from_error("block relations", exc))
    try:
        Tc = _constant_T(T, m)
        pre.append(HypothesisResult("constant T", True, 0.0))
    except CrossmaxError as exc:
        pre.append(_hyp_from_error("constant T", exc))
    if Tc is None:
        # fall back to the nodewise T for the conclusion only
        Tn = _nodewise(T, p.grid, m)
        em = ellipticity_margin(p.A, p.meta.get("ellipticity", "quadratic"))
        hyps = pre + [HypothesisResult("ellipticity", em > 0, em)]
        k_used = float(p.k) if isinstance(k, str) else float(k)
        try:
            W = solve(assemble_system(p.replace(k=k_used)), p.F)
            concl = positivity_verdict(W, Tn, tol_pos)
        except CrossmaxError as exc:
            W, concl = None, Conclusion(False, np.nan, np.nan, (0, 0), 0.0, -1.0, str(exc))
        return VerificationReport("GenMPMatT", _status(hyps, concl), hyps, concl, k_used, solution=W)
    return _run_pipeline(p, "GenMPMatT", Tc, k, "alt", tol_pos, sample_density, pre, True)


# ---------------------------------------------------------------------------
# strong positivity
# ---------------------------------------------------------------------------


def _battery(grid: Grid, m: int) -> list:
    """Boundary-of-cone inputs in ``v`` space: single-component ``phi1`` and
    local hat bumps, every other component zero."""
    from .field_model import eval_field

    phi = eval_field("phi1", grid).values
    inner = grid.interior_nodes
    n = grid.n_cells
    if grid.dim == 1:
        centres = sorted({max(1, min(n - 1, int(round(f * n)))) for f in (0.25, 0.5, 0.75)})
    else:
        c = [max(1, min(n - 1, int(round(f * n)))) for f in (0.25, 0.5, 0.75)]
        centres = sorted({iy * (n + 1) + ix for iy, ix in ((c[1], c[1]), (c[0], c[2]), (c[2], c[0]))})
    hats = []
    for ctr in centres:
        bump = np.zeros(grid.n_nodes)
        bump[ctr] = 1.0
        if grid.dim == 1:
            bump[ctr - 1] = bump[ctr + 1] = 0.5
        hats.append(bump)
    out = []
    for i in range(m):
        for shape in [phi] + hats:
            v = np.zeros((m, grid.n_nodes))
            v[i] = shape
            v[:, ~np.isin(np.arange(grid.n_nodes), inner)] = 0.0
            out.append(v)
    return out


def _power_iteration(apply_S, size: int, tol: float = 1e-12, max_iter: int = 20000):
    """Dominant eigenpair of a positive operator by power iteration from ones,
    stopped by the Collatz-Wielandt bounds."""
    x = np.ones(size)
    rho, lo, hi = 0.0, -np.inf, np.inf
    for it in range(1, max_iter + 1):
        y = apply_S(x)
        ymax = np.max(np.abs(y))
        if ymax == 0:
            return 0.0, x, it, False
        with np.errstate(divide="ignore", invalid="ignore"):
            r = y / x
        if np.all(x > 0):
            lo, hi = float(np.min(r)), float(np.max(r))
            rho = 0.5 * (lo + hi)
        x = y / ymax
        if np.isfinite(lo) and hi - lo <= tol * abs(hi):
            return rho, x, it, True
    return float(x @ apply_S(x) / (x @ x)), x, max_iter, False


def _strong_conclusion(op: DiscreteOperator, Mn: np.ndarray, T: np.ndarray, grid: Grid, m: int,
                       tol_pos, dense_limit: int = 512):
    """Battery and Perron checks for ``T L^{-1} M T^{-1}``."""
    inner = grid.interior_nodes
    Ni = grid.n_interior
    Minner = Mn[inner]
    Tinv = np.linalg.inv(T)

    def to_W(v_flat):
        V = v_flat.reshape(m, Ni)
        return (Tinv @ V).reshape(-1)

    def apply_M(w_flat):
        Wv = w_flat.reshape(m, Ni)
        return np.einsum("nij,jn->in", Minner, Wv).reshape(-1)

    def to_v(w_flat):
        return (T @ w_flat.reshape(m, Ni)).reshape(-1)

    def apply_S(v_flat):
        return to_v(solve_flat(op, apply_M(to_W(v_flat))))

    battery = []
    worst = np.inf
    worst_case = None
    for idx, v in enumerate(_battery(grid, m)):
        out = apply_S(grid.to_interior(v).reshape(-1))
        Vf = VectorField.from_interior(grid, out, m)
        c = positivity_verdict(Vf, None, tol_pos, strict_all=True)
        battery.append(c.positive)
        if c.margin < worst:
            worst, worst_case = c.margin, (idx, c)
    eigen: dict = {}
    rho, x, iters, conv = _power_iteration(apply_S, m * Ni)
    eigen.update({"perron_value": rho, "perron_min": float(np.min(x)), "perron_iterations": iters,
                  "perron_converged": conv})
    dense_ok = True
    if m * Ni <= dense_limit:
        S = np.column_stack([apply_S(e) for e in np.eye(m * Ni)])
        ev = np.linalg.eigvals(S)
        dom = ev[np.argmax(np.abs(ev))]
        eigen["dense_value"] = float(dom.real)
        eigen["dense_imag"] = float(abs(dom.imag))
        rel = abs(rho - dom.real) / max(abs(dom.real), 1e-300)
        eigen["relative_difference"] = float(rel)
        dense_ok = bool(rel <= 1e-8 and abs(dom.imag) <= 1e-10 * abs(dom.real))
    perron_ok = conv and float(np.min(x)) > 0
    return battery, worst, worst_case, eigen, perron_ok, dense_ok


def verify_strong_positivity(p: Problem, M, T=None, kappa: Union[str, float] = "auto",
                             k: Union[str, float] = "auto", tol_pos: Optional[float] = None,
                             theorem: str = "GenMPMatTKR") -> VerificationReport:
    """Strong positivity of ``L^{-1} M`` for
    ``L W = -div(A DW) + B DW + kappa (L B)^{-1} T W + k W - K W``.

    Hypotheses: constant transform of ``A T^{-1}``; ``L B M T^{-1} > 0``;
    ``L B (K - k I) T^{-1}`` cooperative; ``C`` diagonal; the Lopez
    condition for the ``v`` system with zeroth-order term
    ``kappa I - L B (K - k I) T^{-1}``.  Conclusion: a battery of
    boundary-of-cone inputs maps into the interior of the cone and the
    Perron vector of ``T L^{-1} M T^{-1}`` is positive (matched against a
    dense eigen-decomposition when ``m N <= 512``).

    ``k = "auto"`` takes the first of ``0, 1, 2, 4, ...`` making the
    reaction cooperative; ``kappa = "auto"`` doubles from 1 until the
    Lopez condition holds.
    """
    grid, m = p.grid, p.m
    Tc = _constant_T(T, m)
    Mn = _nodewise(M, grid, m)
    hyps = []
    notes = []
    em = ellipticity_margin(p.A, p.meta.get("ellipticity", "quadratic"))
    hyps.append(HypothesisResult("ellipticity", em > 0, em, p.meta.get("ellipticity", "quadratic")))
    k_used = 0.0 if isinstance(k, str) else float(k)
    kappa_used = K_START if isinstance(kappa, str) else float(kappa)
    eigen: dict = {}
    try:
        bundle = construct_transform(p.A, "alt", T_hint=None if np.allclose(Tc, np.eye(m)) else Tc)
        tr = _transformed(p, bundle, Tc)
        hyps.append(HypothesisResult("constant transform", True, float(np.min(bundle.A_d))))
    except CrossmaxError as exc:
        tr = None
        hyps.append(_hyp_from_error("constant transform", exc))
    if tr is not None:
        P = tr.LB @ Mn @ np.linalg.inv(Tc)
        pmin = float(np.min(P))
        hyps.append(HypothesisResult("L B M T^-1 positive", pmin > POS_RTOL * _scale(P), pmin))
        tol_n = STRUCT_RTOL * _scale(tr.N0, tr.LBT)
        if isinstance(k, str):
            cand = [0.0] + [K_START * 2.0 ** i for i in range(21)]
            k_used = next((kk for kk in cand if m == 1 or offdiag_min(tr.N(kk)) >= -tol_n), 0.0)
        om = offdiag_min(tr.N(k_used)) if m > 1 else 0.0
        hyps.append(HypothesisResult("reaction cooperative", om >= -tol_n, om + tol_n))
        Cs = tr.C_stack()
        tol_c = STRUCT_RTOL * _scale(Cs)
        off = triangular_violation(Cs, "diagonal")
        hyps.append(HypothesisResult("C diagonal", off <= tol_c, tol_c - off))
        if off <= tol_c:
            eps = [principal_eigenpair(_comparison_op(tr, grid, i, None)) for i in range(m)]
            N = tr.N(k_used)
            if isinstance(kappa, str):
                found = doubling_search(lambda kp: lopez_condition_check(None, N, kp, eps).holds)
                if found is None:
                    notes.append("no kappa in search range satisfies the Lopez condition")
                else:
                    kappa_used = found
            lr = lopez_condition_check(None, N, kappa_used, eps)
            hyps.append(HypothesisResult("Lopez condition", lr.holds, lr.margin,
                                         f"threshold kappa = {lr.k_threshold:.6g}"))
            eigen["comparison_lambdas"] = lr.lambdas
        else:
            hyps.append(HypothesisResult("Lopez condition", False, -1.0, "C not diagonal"))
        LBinvT = np.linalg.inv(tr.LB) @ Tc
    else:
        LBinvT = np.broadcast_to(Tc, (grid.n_nodes, m, m))
    K_op = MatrixField(grid, p.K.values - kappa_used * LBinvT)
    concl, W = _strong_positivity_outcome(p.replace(K=K_op, k=k_used), Mn, Tc, tol_pos, eigen, notes)
    return VerificationReport(theorem, _status(hyps, concl), hyps, concl, k_used, kappa_used,
                              False, eigen, {}, notes, W)


def _strong_positivity_outcome(p_op: Problem, Mn: np.ndarray, Tc: np.ndarray, tol_pos, eigen: dict, notes: list):
    grid, m = p_op.grid, p_op.m
    try:
        op = assemble_system(p_op)
        factorize(op)
        battery, worst, worst_case, eig, perron_ok, dense_ok = _strong_conclusion(op, Mn, Tc, grid, m, tol_pos)
    except CrossmaxError as exc:
        return Conclusion(False, np.nan, np.nan, (0, 0), 0.0, -1.0, f"{type(exc).__name__}: {exc}"), None
    eigen.update(eig)
    _, c = worst_case
    ok = all(battery) and perron_ok and dense_ok
    detail = (f"battery {sum(battery)}/{len(battery)} strictly interior; Perron vector "
              f"{'positive' if perron_ok else 'not positive or not converged'}"
              + ("" if dense_ok else "; dense eigenvalue mismatch"))
    return Conclusion(ok, c.min_value, c.min_deep, c.location, c.tol_pos, worst, detail), None


# ---------------------------------------------------------------------------
# positive / cooperative pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PposPcoopResult:
    """Matrices and shift satisfying
    ``kappa T^{-1} P_pos^{-1} T > T^{-1} P_pos^{-1} (P_coop T + k L B)``.

    ``M`` is ``(L B)^{-1}[P_pos + kappa I - P_coop] T - k I`` and ``K_bar``
    is ``(L B)^{-1} P_coop T + k I`` (both nodewise stacks).  ``margin`` is
    the smallest entry of the difference of the two sides.
    ``t_cone_margin`` is the smallest entry of
    ``P_pos^{-1}(kappa I - P_coop - k L B T^{-1})``, the condition that makes
    the second summand of ``M`` preserve the cone ``T W > 0``; it is
    reported, not required.
    """

    P_pos: np.ndarray
    P_coop: np.ndarray
    kappa: float
    M: np.ndarray
    K_bar: np.ndarray
    margin: float
    case: str
    nu_star: int
    nu_condition: bool
    m_star_positive: bool
    m_sign: str
    t_cone_margin: float = float("nan")


def _kappa_inequality(kappa, LB, T, Tinv, Pinv, P_coop, k):
    lhs = kappa * (Tinv @ Pinv @ T)
    rhs = Tinv @ Pinv @ (P_coop @ T + k * LB)
    return lhs - rhs


def build_PposPcoop(LB, T, k: float, case: str = "ii", nu_star: int = 1, P_pos=None, P_coop=None,
                    kappa_cap: float = K_CAP, grid: Optional[Grid] = None) -> PposPcoopResult:
    """Construct ``P_pos > 0``, cooperative ``P_coop`` and ``kappa`` for the
    positive/cooperative version of the strong positivity result.

    ``P_pos`` defaults to all-ones plus identity and ``P_coop`` to zero.
    ``kappa`` doubles from 1 until the inequality holds entrywise at every
    node.

    Parameters
    ----------
    LB, T : constant matrices or MatrixField
    case : {"i", "ii", "iii"}
        Which structural case for ``(L B, T)`` is claimed: ``L B``
        constant; ``T`` constant and ``L B`` diagonal; or ``L B`` and
        ``D T T^{-1}`` diagonal.
    nu_star : {1, -1}
        Sign branch; ``nu_star T > 0`` and ``M_* > 0`` are reported.

    Raises
    ------
    PreconditionError
        Invalid ``case``/``nu_star``, claimed case not satisfied,
        ``P_pos`` not positive or ``P_coop`` not cooperative.
    StructureError
        Clause ``"kappa inequality"`` when no ``kappa <= kappa_cap`` works.
    """
    if case not in ("i", "ii", "iii"):
        raise PreconditionError(f"unknown case {case!r}")
    if nu_star not in (1, -1):
        raise PreconditionError("nu_star must be +1 or -1")
    if grid is None:
        grid = next((f.grid for f in (LB, T) if isinstance(f, MatrixField)), None)
    LBa = LB.values if isinstance(LB, MatrixField) else np.asarray(LB, dtype=float)
    Ta = T.values if isinstance(T, MatrixField) else np.asarray(T, dtype=float)
    LBs = LBa if LBa.ndim == 3 else LBa[None]
    Ts = Ta if Ta.ndim == 3 else Ta[None]
    n = LBs.shape[1]
    nn = max(LBs.shape[0], Ts.shape[0])
    LBs = np.broadcast_to(LBs, (nn, n, n))
    Ts = np.broadcast_to(Ts, (nn, n, n))
    lb_const = bool(np.all(np.abs(LBs - LBs[0]) <= 1e-12 * _scale(LBs)))
    t_const = bool(np.all(np.abs(Ts - Ts[0]) <= 1e-12 * _scale(Ts)))
    lb_diag = triangular_violation(LBs, "diagonal") <= 1e-12 * _scale(LBs)
    if case == "i":
        ok = lb_const
    elif case == "ii":
        ok = t_const and lb_diag
    else:
        if grid is None or Ts.shape[0] != grid.n_nodes:
            ok = lb_diag and t_const
        else:
            dT = gradient_array(np.array(Ts), grid)
            DTT = np.concatenate([d @ np.linalg.inv(Ts) for d in dT])
            ok = lb_diag and triangular_violation(DTT, "diagonal") <= 1e-8 * _scale(DTT)
    if not ok:
        raise PreconditionError(f"(L B, T) does not satisfy case {case}")
    P_pos = np.ones((n, n)) + np.eye(n) if P_pos is None else np.asarray(P_pos, dtype=float)
    P_coop = np.zeros((n, n)) if P_coop is None else np.asarray(P_coop, dtype=float)
    if not np.all(P_pos > 0):
        raise PreconditionError("P_pos must be entrywise positive")
    if n > 1 and offdiag_min(P_coop) < 0:
        raise PreconditionError("P_coop must be cooperative")
    Pinv = np.linalg.inv(P_pos)
    Tinv = np.linalg.inv(Ts)
    kappa = 1.0
    X = _kappa_inequality(kappa, LBs, Ts, Tinv, Pinv, P_coop, k)
    while not np.all(X > POS_RTOL * _scale(X)):
        if kappa * 2 > kappa_cap:
            raise StructureError(
                f"kappa inequality fails for every kappa <= {kappa_cap:g} (min entry {np.min(X):.3e} "
                f"at kappa = {kappa:g}; min of T^-1 P_pos^-1 T is {np.min(Tinv @ Pinv @ Ts):.3e})",
                "kappa inequality", measured=float(np.min(X)))
        kappa *= 2.0
        X = _kappa_inequality(kappa, LBs, Ts, Tinv, Pinv, P_coop, k)
    LBinv = np.linalg.inv(LBs)
    eye = np.eye(n)
    M = LBinv @ (P_pos + kappa * eye - P_coop) @ Ts - k * eye
    K_bar = LBinv @ P_coop @ Ts + k * eye
    M_star = nu_star * (LBinv @ (kappa * eye - P_coop) @ Ts - k * eye)
    nu_cond = bool(np.all(nu_star * Ts > 0))
    core = LBinv @ P_pos @ Ts
    sign = "positive" if np.all(core > 0) else "negative" if np.all(core < 0) else "mixed"
    t_cone = Pinv @ (kappa * eye - P_coop - k * LBs @ Tinv)
    return PposPcoopResult(P_pos, P_coop, kappa, M, K_bar, float(np.min(X)), case, nu_star, nu_cond,
                           bool(np.all(M_star > 0)), sign, float(np.min(t_cone)))


def verify_GenMPMatTKRnew(p: Problem, T=None, k: float = 1.0, case: str = "ii", nu_star: int = 1,
                          P_pos=None, P_coop=None, tol_pos: Optional[float] = None) -> VerificationReport:
    """Strong positivity of ``Lhat^{-1} M`` with
    ``Lhat W = -div(A DW) + B DW + k W`` and ``M`` from :func:`build_PposPcoop`."""
    grid, m = p.grid, p.m
    Tc = _constant_T(T, m)
    hyps = []
    notes: list = []
    em = ellipticity_margin(p.A, p.meta.get("ellipticity", "quadratic"))
    hyps.append(HypothesisResult("ellipticity", em > 0, em, p.meta.get("ellipticity", "quadratic")))
    eigen: dict = {}
    try:
        bundle = construct_transform(p.A, "alt", T_hint=None if np.allclose(Tc, np.eye(m)) else Tc)
        tr = _transformed(p, bundle, Tc)
        hyps.append(HypothesisResult("constant transform", True, float(np.min(bundle.A_d))))
    except CrossmaxError as exc:
        hyps.append(_hyp_from_error("constant transform", exc))
        return VerificationReport("GenMPMatTKRnew", HYPOTHESES_UNMET, hyps, None, k)
    Cs = tr.C_stack()
    tol_c = STRUCT_RTOL * _scale(Cs)
    off = triangular_violation(Cs, "diagonal")
    hyps.append(HypothesisResult("C diagonal", off <= tol_c, tol_c - off))
    kappa = None
    try:
        res = build_PposPcoop(MatrixField(grid, tr.LB), Tc, k, case, nu_star, P_pos, P_coop)
        kappa = res.kappa
        hyps.append(HypothesisResult("kappa inequality", True, res.margin, f"case {case}"))
        eigen["nu_condition"] = res.nu_condition
        eigen["M_sign"] = res.m_sign
        eigen["t_cone_margin"] = res.t_cone_margin
        if res.t_cone_margin < 0:
            notes.append("the kappa inequality holds but P_pos^-1 (kappa I - P_coop - k L B T^-1) has a negative "
                         "entry, so the second summand of M need not preserve the cone T W > 0")
        Mn = res.M if res.M.shape[0] == grid.n_nodes else np.broadcast_to(res.M[0], (grid.n_nodes, m, m))
    except CrossmaxError as exc:
        hyps.append(_hyp_from_error("kappa inequality", exc))
        return VerificationReport("GenMPMatTKRnew", HYPOTHESES_UNMET, hyps, None, k, None, notes=notes)
    p_op = p.replace(K=MatrixField.constant(np.zeros((m, m)), grid), k=k)
    concl, _ = _strong_positivity_outcome(p_op, Mn, Tc, tol_pos, eigen, notes)
    return VerificationReport("GenMPMatTKRnew", _status(hyps, concl), hyps, concl, k, kappa, False, eigen,
                              {}, notes)


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------


def verify(p: Problem, theorem: str = "GenMPMat", *, T=None, M=None, k: Union[str, float] = "auto",
           kappa: Union[str, float] = "auto", tol_pos: Optional[float] = None,
           sample_density: Optional[int] = None, **extra) -> VerificationReport:
    """Run the verifier named by ``theorem`` (one of :data:`THEOREMS`)."""
    if theorem not in THEOREMS:
        raise PreconditionError(f"unknown theorem {theorem!r}")
    m = p.m
    if theorem == "lopez":
        off = triangular_violation(p.A, "diagonal")
        pre = [HypothesisResult("diagonal diffusion", off == 0.0, -off)]
        return _run_pipeline(p, "lopez", None, k, "alt", tol_pos, sample_density, pre, True)
    if theorem == "maxmat":
        pre = [HypothesisResult("two equations", m == 2, 0.0 if m == 2 else -1.0)]
        return _run_pipeline(p, "maxmat", None, k, "alt", tol_pos, sample_density, pre, True)
    if theorem == "matmaxprinciple":
        try:
            cond = matrowconda_check(p.A, beta_last=extra.get("beta_last", 0.0))
            pre = [HypothesisResult("row-ratio structure", True, float(np.min(cond.pivots)))]
        except CrossmaxError as exc:
            pre = [_hyp_from_error("row-ratio structure", exc)]
            return _run_pipeline(p, "matmaxprinciple", None, k, "alt", tol_pos, sample_density, pre, True)
        return _run_pipeline(p, "matmaxprinciple", None, k, "matrowconda", tol_pos, sample_density, pre, True)
    if theorem == "GenMPMat":
        return verify_GenMPMat(p, k, tol_pos=tol_pos, sample_density=sample_density)
    if theorem == "GenMPMatT":
        return verify_GenMPMatT(p, np.eye(m) if T is None else T, k, tol_pos, sample_density)
    if M is None:
        M = np.ones((m, m)) + np.eye(m)
    if theorem == "GenMPMatTKR":
        return verify_strong_positivity(p, M, T, kappa, k, tol_pos)
    k_val = 1.0 if isinstance(k, str) else float(k)
    return verify_GenMPMatTKRnew(p, T, k_val, extra.get("case", "ii"), extra.get("nu_star", 1),
                                 extra.get("P_pos"), extra.get("P_coop"), tol_pos)
