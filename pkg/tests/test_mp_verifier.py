import numpy as np
import pytest

from crossmax.discrete_operator import Problem, assemble_scalar, assemble_system
from crossmax.errors import PreconditionError, StructureError
from crossmax.field_model import Grid, MatrixField, ScalarField, VectorField, eval_field
from crossmax.linear_core import principal_eigenpair, solve
from crossmax.mp_verifier import (CONCLUSION_FAILED, HYPOTHESES_UNMET, VERIFIED, build_PposPcoop, cone_check,
                                  doubling_search, lopez_condition_check, positivity_verdict, verify,
                                  verify_GenMPMat, verify_GenMPMatT, verify_GenMPMatTKRnew,
                                  verify_strong_positivity)


def lap(grid, a=1.0):
    return assemble_scalar(ScalarField(grid, np.full(grid.n_nodes, a)), None, None, grid)


def names(report):
    return [h.name for h in report.hypotheses]


# helpers

def test_doubling_search():
    assert doubling_search(lambda k: k >= 10) == 16
    assert doubling_search(lambda k: False, cap=8) is None


def test_positivity_verdict_boundary_layer(grid32):
    phi = eval_field("phi1", grid32).values
    W = VectorField(grid32, np.stack([phi, phi]))
    assert positivity_verdict(W).positive
    bad = np.array(W.values)
    bad[1, 16] = -1e-3
    c = positivity_verdict(VectorField(grid32, bad))
    assert not c.positive and c.location == (1, 16) and c.min_value == -1e-3


def test_positivity_verdict_with_T(grid32):
    phi = eval_field("phi1", grid32).values
    W = VectorField(grid32, np.stack([phi, -phi]))
    assert not positivity_verdict(W).positive
    assert positivity_verdict(W, np.diag([1.0, -1.0])).positive


# Lopez condition

def test_lopez_zero_coupling(grid32):
    ops = [lap(grid32), lap(grid32, 2.0)]
    assert lopez_condition_check(ops, np.zeros((2, 2)), 1.0).holds


def test_lopez_unit_coupling(grid64):
    ops = [lap(grid64), lap(grid64)]
    res = lopez_condition_check(ops, [[0, 1], [1, 0]], 0.0)
    assert res.holds
    assert res.lambdas[0] == pytest.approx(np.pi ** 2, rel=1e-3)


def test_lopez_strong_coupling_threshold(grid64):
    ops = [lap(grid64), lap(grid64)]
    res = lopez_condition_check(ops, [[0, 20], [20, 0]], 0.0)
    assert not res.holds
    lam = res.lambdas[0]
    # equal psi's reduce the inequality to lambda + k > 20
    assert res.k_threshold == pytest.approx(20 - lam, abs=1e-8)
    assert abs(res.k_threshold - (20 - np.pi ** 2)) < 0.01
    assert lopez_condition_check(ops, [[0, 20], [20, 0]], res.k_threshold + 1e-3).holds
    p = Problem.build(grid64, np.eye(2), K=[[0, 20], [20, 0]], F=["phi1", "phi1"])
    rep = verify_GenMPMat(p)
    assert rep.status == VERIFIED and rep.k_used == 16.0
    assert rep.k_used > res.k_threshold >= rep.k_used / 2


# cone

def test_cone_identity(grid32):
    F = VectorField.from_exprs(["phi1", "phi1"], grid32)
    assert cone_check(F, np.eye(2)).holds


@pytest.mark.parametrize("F,ratio,expected", [
    ((1, 1), 1.0, True),
    ((1, 1), 3.0, False),
    ((1, 3), 1.0, False),
])
def test_cone_triangular_set(grid16, F, ratio, expected):
    # f1 - (b/d) f2 > 0 and f2 - (c/a)(f1 - (b/d) f2) > 0 with b/d = 1/2
    bd = 0.5
    LB = np.array([[1.0, -bd], [-ratio, 1.0 + ratio * bd]])
    FF = VectorField.from_exprs([str(F[0]), str(F[1])], grid16)
    res = cone_check(FF, LB)
    f1 = F[0] - bd * F[1]
    f2 = F[1] - ratio * f1
    assert res.holds is expected is (f1 > 0 and f2 > 0)
    assert res.margin == pytest.approx(min(f1, f2))


# maximum principle verifiers

def test_classical_cooperative(grid64):
    p = Problem.build(grid64, np.diag([1.0, 2.0]), K=[[0, 1], [1, 0]], F=["phi1", "phi1"])
    rep = verify_GenMPMat(p)
    assert rep.status == VERIFIED and rep.conclusion.positive
    assert names(rep) == ["ellipticity", "constant transform", "cone", "lower-order coupling"]
    assert all(np.isfinite(h.margin) for h in rep.hypotheses)


@pytest.mark.parametrize("n", [32, 64])
def test_lower_triangular_case(n):
    g = Grid(1, n)
    p = Problem.build(g, [[1, 0], [1, 1]], K=[[0, 0], [1, 0]], F=["phi1", "3*phi1"])
    rep = verify_GenMPMat(p)
    assert rep.status == VERIFIED
    W = solve(assemble_system(p.replace(k=rep.k_used)), p.F)
    assert np.min(g.to_interior(W.values)) > 0


def test_symmetric_cross_diffusion_refuted(grid64):
    p = Problem.build(grid64, [[1, 2], [2, 5]], k=1.0, F=["phi1", "phi1"])
    rep = verify_GenMPMat(p, k=1.0)
    assert rep.status == HYPOTHESES_UNMET
    assert not rep.hypothesis("cone").passed


def test_hypothesis_failure_does_not_abort(grid32):
    p = Problem.build(grid32, [["1", "0"], ["x", "1"]], F=["phi1", "phi1"])
    rep = verify_GenMPMat(p)
    assert rep.conclusion is not None and rep.solution is not None


def test_triangular_route_green_condition(grid32):
    # variable gamma: L is not constant, so C != 0 and the Green clause is evaluated
    p = Problem.build(grid32, [["1", "0"], ["1+phi1", "1"]], F=["phi1", "5*phi1"])
    rep = verify_GenMPMat(p, k=1.0)
    tri = {h.name: h for h in rep.routes["triangular"]}
    assert "Green sign condition" in tri
    assert tri["Green sign condition"].detail != "not evaluated"


@pytest.mark.parametrize("scale", [1e-3, 1.0, 250.0])
def test_scale_invariance(grid32, scale):
    base = Problem.build(grid32, np.diag([1.0, 2.0]), K=[[0, 1], [1, 0]], F=["phi1", "phi1"])
    ref = verify_GenMPMat(base)
    p = base.replace(F=VectorField(grid32, scale * base.F.values))
    rep = verify_GenMPMat(p)
    assert [h.passed for h in rep.hypotheses] == [h.passed for h in ref.hypotheses]
    assert rep.conclusion.positive == ref.conclusion.positive and rep.status == ref.status


@pytest.mark.parametrize("K", [[[0, 20], [20, 0]], [[0, 3], [5, 0]], [[1, 15], [0.5, 2]]])
def test_monotone_in_k(grid32, K):
    p = Problem.build(grid32, np.diag([1.0, 2.0]), K=K, F=["phi1", "phi1"])
    passed = [verify_GenMPMat(p, k=k).hypotheses_pass for k in (0.5, 1, 2, 4, 8, 16, 32, 64)]
    first = passed.index(True)
    assert all(passed[first:])


def test_T_identity_matches(grid32):
    for A, K in [(np.diag([1.0, 2.0]), [[0, 1], [1, 0]]), ([[1, 2], [2, 5]], [[0, 0], [0, 0]]),
                 ([[1, 0], [1, 1]], [[0, 0], [1, 0]])]:
        p = Problem.build(grid32, A, K=K, F=["phi1", "2*phi1"])
        a = verify_GenMPMat(p)
        b = verify_GenMPMatT(p, np.eye(2))
        assert a.status == b.status and a.conclusion.positive == b.conclusion.positive
        assert names(b)[:2] == ["block relations", "constant T"] and names(b)[2:] == names(a)
        assert [h.passed for h in b.hypotheses[2:]] == [h.passed for h in a.hypotheses]


def test_competitive_blocks_sign_flip(grid64):
    p = Problem.build(grid64, np.diag([1.0, 2.0]), K=[[0, -1], [-1, 0]], F=["phi1", "-phi1"])
    rep = verify_GenMPMatT(p, np.diag([1.0, -1.0]))
    assert rep.status == VERIFIED
    W = rep.solution.values[:, grid64.interior_nodes]
    assert np.all(W[0] > 0) and np.all(W[1] < 0)
    # equivalent cooperative system for v = T W
    q = Problem.build(grid64, np.diag([1.0, 2.0]), K=[[0, 1], [1, 0]], k=rep.k_used, F=["phi1", "phi1"])
    V = solve(assemble_system(q), q.F).values[:, grid64.interior_nodes]
    np.testing.assert_allclose(V, W * np.array([[1.0], [-1.0]]), atol=1e-12)


def test_nonconstant_T_fails(grid16):
    T = MatrixField.from_entries([["1+x", "x"], ["0", "1"]], grid16)
    p = Problem.build(grid16, np.diag([1.0, 2.0]), F=["phi1", "phi1"])
    rep = verify_GenMPMatT(p, T)
    assert rep.status == HYPOTHESES_UNMET
    assert not rep.hypothesis("constant T").passed


# strong positivity

def test_strong_positivity_classical():
    g = Grid(1, 32)
    p = Problem.build(g, np.diag([1.0, 2.0]))
    rep = verify_strong_positivity(p, [[2, 1], [1, 2]])
    assert rep.status == VERIFIED
    assert rep.eigen["perron_min"] > 0
    assert rep.eigen["relative_difference"] <= 1e-8


def test_strong_positivity_matches_dense_eig():
    g = Grid(1, 16)
    p = Problem.build(g, np.diag([1.0, 2.0]))
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    rep = verify_strong_positivity(p, M)
    # independent dense construction of L^{-1} M
    K_op = p.K.values - rep.kappa_used * np.eye(2)
    L = assemble_system(p.replace(K=MatrixField(g, K_op), k=rep.k_used)).dense()
    N = g.n_interior
    S = np.linalg.solve(L, np.kron(M, np.eye(N)))
    ev = np.linalg.eigvals(S)
    dom = ev[np.argmax(np.abs(ev))]
    assert abs(dom.imag) < 1e-12
    assert rep.eigen["perron_value"] == pytest.approx(dom.real, rel=1e-8)


def test_strong_positivity_bad_M():
    g = Grid(1, 8)
    p = Problem.build(g, np.diag([1.0, 2.0]))
    rep = verify_strong_positivity(p, [[-1, 1], [-1, 2]])
    assert rep.status == HYPOTHESES_UNMET
    assert not rep.hypothesis("L B M T^-1 positive").passed
    assert "perron_value" in rep.eigen


# positive / cooperative construction

def test_ppos_identity_infeasible():
    # T^-1 P^-1 T = P^-1 has negative entries for every positive 2x2 P
    with pytest.raises(StructureError) as exc:
        build_PposPcoop(np.eye(2), np.eye(2), 1.0, case="i")
    assert exc.value.clause == "kappa inequality"
    with pytest.raises(StructureError):
        build_PposPcoop(np.eye(2), 2 * np.eye(2), 1.0, case="i", P_coop=[[0, 1], [1, 0]])


def test_ppos_feasible_window():
    T = np.array([[1.0, 0.0], [1 / 3, -1 / 3]])
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    LB = np.array([[1.0, 0.0], [2.0, -1.0]])
    res = build_PposPcoop(LB, T, 1.0, case="i", P_pos=P)
    assert res.kappa == 4.0 and res.margin == pytest.approx(1 / 9)
    Ti = np.linalg.inv(T)
    X = res.kappa * Ti @ np.linalg.inv(P) @ T - Ti @ np.linalg.inv(P) @ (res.P_coop @ T + LB)
    assert np.min(X) == pytest.approx(res.margin)
    M = np.linalg.inv(LB) @ (P + res.kappa * np.eye(2) - res.P_coop) @ T - np.eye(2)
    np.testing.assert_allclose(res.M[0], M)
    assert res.t_cone_margin < 0


def test_ppos_cone_gap_reported():
    g = Grid(1, 16)
    p = Problem.build(g, np.diag([1.0, 2.0]))
    T = np.array([[1.0, 0.0], [1 / 3, -1 / 3]])
    rep = verify_GenMPMatTKRnew(p, T, 1.0, case="i", P_pos=[[2, 1], [1, 2]])
    assert rep.hypotheses_pass and rep.status == CONCLUSION_FAILED
    assert rep.eigen["t_cone_margin"] < 0 and rep.notes


def test_ppos_negative_branch_infeasible():
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    T = -np.linalg.inv(3 * np.eye(2) - B)
    assert np.all(T < 0)
    with pytest.raises(StructureError) as exc:
        build_PposPcoop(np.eye(2), T, 1.0, case="ii", nu_star=-1)
    assert exc.value.clause == "kappa inequality"


@pytest.mark.parametrize("kw", [dict(case="iv"), dict(nu_star=0), dict(P_pos=[[1, 0], [1, 1]]),
                                dict(P_coop=[[0, -1], [0, 0]]), dict(case="ii", LB=[[1, 1], [0, 1]])])
def test_ppos_preconditions(kw):
    kw = dict(kw)
    LB = kw.pop("LB", np.eye(2))
    with pytest.raises(PreconditionError):
        build_PposPcoop(LB, np.eye(2), 1.0, **kw)


# dispatcher

def test_dispatch_lopez_and_maxmat(grid32):
    p = Problem.build(grid32, [[1, 0], [1, 1]], K=[[0, 0], [1, 0]], F=["phi1", "3*phi1"])
    assert not verify(p, "lopez").hypothesis("diagonal diffusion").passed
    assert verify(p, "maxmat").status == VERIFIED
    q = Problem.build(grid32, np.diag([1.0, 2.0, 3.0]), F=["phi1"] * 3)
    assert not verify(q, "maxmat").hypothesis("two equations").passed


def test_dispatch_rowratio(grid32):
    from crossmax.counterexample_suite import three_by_three_matrix
    A = three_by_three_matrix(beta1=0.7, beta2=0.5, gamma2=1.4, gamma3=2.0)
    p = Problem.build(grid32, A, F=["phi1"] * 3)
    rep = verify(p, "matmaxprinciple")
    assert rep.hypothesis("row-ratio structure").passed is False
    assert "beta-gamma product" in rep.hypothesis("row-ratio structure").detail


def test_dispatch_unknown(grid16):
    with pytest.raises(PreconditionError):
        verify(Problem.build(grid16, np.eye(2)), "nosuch")


def test_report_serializable(grid32):
    import json
    p = Problem.build(grid32, np.diag([1.0, 2.0]), K=[[0, 1], [1, 0]], F=["phi1", "phi1"])
    d = verify_GenMPMat(p).to_dict()
    assert json.loads(json.dumps(d))["status"] == VERIFIED
