import numpy as np
import pytest

from crossmax.discrete_operator import Problem, apply, assemble_scalar, assemble_system
from crossmax.errors import SingularityError
from crossmax.field_model import Grid, ScalarField, VectorField, eval_field, gradient
from crossmax.linear_core import green_columns, green_sign_condition, principal_eigenpair, solve


def lap(grid, c=0.0):
    one = ScalarField(grid, np.ones(grid.n_nodes))
    return assemble_scalar(one, None, ScalarField(grid, np.full(grid.n_nodes, c)), grid)


def test_solve_zero(grid32):
    op = lap(grid32)
    W = solve(op, VectorField(grid32, np.zeros((1, grid32.n_nodes))))
    assert not np.any(W.values)


def test_solve_closed_form(grid64):
    op = lap(grid64)
    W = solve(op, VectorField(grid64, np.ones((1, grid64.n_nodes))))
    x = grid64.coords[0]
    assert np.max(np.abs(W.values[0] - x * (1 - x) / 2)) < grid64.h ** 2


def test_solve_singular(grid32):
    op = lap(grid32)
    lam = principal_eigenpair(op).lambda1
    with pytest.raises(SingularityError):
        solve(op.shifted(-lam), VectorField(grid32, np.ones((1, grid32.n_nodes))))


@pytest.mark.parametrize("n", [16, 64, 128])
def test_solve_apply_identity(n, rng):
    g = Grid(1, n)
    op = assemble_system(Problem.build(g, [[2.0, 0.3], [0.1, 1.0]], K=[[0, 1], [1, 0]], k=1.0,
                                       B=[[[0.5, 0.0], [0.2, -0.4]]]))
    rhs = rng.normal(size=op.size)
    W = solve(op, VectorField.from_interior(g, rhs, 2))
    back = apply(op, W).interior_flat()
    assert np.max(np.abs(back - rhs)) <= 1e-9 * np.max(np.abs(rhs))


def test_eigen_1d():
    g = Grid(1, 128)
    ep = principal_eigenpair(lap(g))
    assert abs(ep.lambda1 - np.pi ** 2) / np.pi ** 2 < 1e-3
    assert np.min(ep.interior()) > 0 and np.max(ep.phi.values) == pytest.approx(1.0)
    assert ep.residual <= 1e-8 * ep.lambda1


def test_eigen_2d():
    g = Grid(2, 64)
    ep = principal_eigenpair(lap(g))
    assert abs(ep.lambda1 - 2 * np.pi ** 2) / (2 * np.pi ** 2) < 5e-3


def test_eigen_shift(grid32):
    e0 = principal_eigenpair(lap(grid32))
    e1 = principal_eigenpair(lap(grid32, 3.0))
    assert e1.lambda1 - e0.lambda1 == pytest.approx(3.0, abs=1e-9)
    np.testing.assert_allclose(e1.phi.values, e0.phi.values, atol=1e-9)


def test_eigen_monotone_in_zeroth_order(grid32, rng):
    a = eval_field("1+x", grid32)
    c = ScalarField(grid32, rng.uniform(0, 5, grid32.n_nodes))
    base = principal_eigenpair(assemble_scalar(a, None, None, grid32)).lambda1
    assert principal_eigenpair(assemble_scalar(a, None, c, grid32)).lambda1 >= base


def test_discrete_maximum_principle(grid64, rng):
    op = assemble_scalar(eval_field("1+x^2", grid64), [eval_field("0.5", grid64)], None, grid64)
    rhs = rng.uniform(0.1, 1.0, grid64.n_interior)
    W = solve(op, rhs)
    assert np.all(grid64.to_interior(W.values[0]) > 0)


def test_green_reconstruction():
    g = Grid(1, 64)
    op = lap(g)
    G = green_columns(op, sources=g.interior_nodes)
    psi = eval_field("1+sin(3*x)", g).values
    ref = solve(op, VectorField(g, psi[None, :])).values[0]
    err = np.max(np.abs(G.reconstruct(psi) - ref)) / np.max(np.abs(ref))
    assert err <= 0.01


def test_green_symmetry():
    g = Grid(1, 32)
    G = green_columns(assemble_scalar(eval_field("1+x", g), None, eval_field("2", g), g),
                      sources=g.interior_nodes)
    M = g.to_interior(G.values)
    assert np.max(np.abs(M - M.T)) <= 1e-9 * np.max(np.abs(M))


def test_green_positivity(grid16):
    op = lap(grid16)
    G = green_columns(op, sources=grid16.interior_nodes)
    assert np.all(grid16.to_interior(G.values) > 0)
    assert np.all(np.linalg.inv(op.dense()) > 0)


def test_green_sign_zero_coefficient(grid32):
    G = green_columns(lap(grid32))
    rep = green_sign_condition({(1, 0): np.zeros((1, grid32.n_nodes))}, {0: G})
    assert rep.holds and rep.margin == 0.0


def test_green_sign_gradient_of_phi(grid32):
    G = green_columns(lap(grid32))
    c = np.stack([gradient(eval_field("phi1", grid32))[0].values])
    rep = green_sign_condition({(1, 0): c}, {0: G})
    assert not rep.holds and rep.minima[(1, 0)] < 0


def test_green_sign_piecewise_linear(grid32):
    G = green_columns(lap(grid32))
    # dG/dx = 1 - y left of the source and -y right of it; at the source the
    # centred difference averages to 1/2 - y
    rep = green_sign_condition({(1, 0): np.ones((1, grid32.n_nodes))}, {0: G}, max_failures=10 ** 6)
    assert not rep.holds
    x = grid32.coords[0]
    fails = rep.failures[(1, 0)]
    assert fails and all(x[xn] >= x[yn] for xn, yn, _ in fails)
    # every node strictly right of a source (away from the kink) is reported
    strict = sum(int(np.sum(x[grid32.interior_nodes] > x[y] + grid32.h)) for y in G.sources)
    assert len(fails) >= strict


def test_green_sign_missing_column(grid16):
    with pytest.raises(Exception):
        green_sign_condition({(1, 0): np.ones((1, grid16.n_nodes))}, {})
