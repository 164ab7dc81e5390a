import warnings

import numpy as np
import pytest

from crossmax.discrete_operator import PecletWarning, Problem, apply, assemble_scalar, assemble_system
from crossmax.errors import DimensionError, EllipticityError
from crossmax.field_model import Grid, MatrixField, ScalarField, VectorField, eval_field
from crossmax.matrix_structure import zm_decompose


def laplacian_1d(n):
    h = 1.0 / n
    N = n - 1
    return (2 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)) / h ** 2


def const(grid, v):
    return ScalarField(grid, np.full(grid.n_nodes, float(v)))


def test_scalar_laplacian_stencil(grid16):
    op = assemble_system(Problem.build(grid16, [[1.0]]))
    np.testing.assert_allclose(op.dense(), laplacian_1d(16), rtol=1e-14)
    assert op.symmetric


def test_shift_k(grid16):
    op = assemble_system(Problem.build(grid16, [[1.0]], k=5.0))
    np.testing.assert_allclose(op.dense(), laplacian_1d(16) + 5 * np.eye(15), rtol=1e-14)


def test_diagonal_system_is_block_diagonal(grid16):
    op = assemble_system(Problem.build(grid16, np.diag([1.0, 2.0])))
    assert op.block(0, 1).nnz == 0 and op.block(1, 0).nnz == 0
    np.testing.assert_allclose(op.block(1, 1).toarray(), 2 * laplacian_1d(16))


def test_scalar_eigenvalue_near_pi2(grid16):
    op = assemble_scalar(const(grid16, 1), None, const(grid16, 0), grid16)
    lam = np.linalg.eigvalsh(op.dense()).min()
    assert abs(lam - np.pi ** 2) / np.pi ** 2 < 0.01
    op10 = assemble_scalar(const(grid16, 1), None, const(grid16, 10), grid16)
    np.testing.assert_allclose(np.linalg.eigvalsh(op10.dense()), np.linalg.eigvalsh(op.dense()) + 10,
                               atol=1e-9)


def test_scalar_flux_form_row_sums(grid32):
    a = eval_field("1+x", grid32)
    c = eval_field("2+x", grid32)
    op = assemble_scalar(a, None, c, grid32)
    out = op.matrix @ np.ones(grid32.n_interior)
    cv = grid32.to_interior(c.values)
    # interior rows see only the zeroth-order term
    np.testing.assert_allclose(out[1:-1], cv[1:-1], rtol=1e-12)
    # boundary rows pick up the flux through the missing neighbour
    h = grid32.h
    assert out[0] == pytest.approx(cv[0] + (1 + 0.5 * h) / h ** 2)


def test_scalar_nonpositive_coefficient(grid16):
    with pytest.raises(EllipticityError):
        assemble_scalar(eval_field("x-0.5", grid16), None, None, grid16)


def test_scalar_symmetry_flag(grid16):
    assert assemble_scalar(const(grid16, 1), None, None, grid16).symmetric
    op = assemble_scalar(const(grid16, 1), [const(grid16, 1)], None, grid16)
    assert not op.symmetric


def test_apply_zero_and_eigenfunction():
    errs = []
    for n in (32, 64):
        g = Grid(1, n)
        op = assemble_system(Problem.build(g, [[1.0]]))
        assert not np.any(apply(op, VectorField(g, np.zeros((1, g.n_nodes)))).values)
        s = eval_field("sin(pi*x)", g)
        out = apply(op, s).values[0]
        errs.append(np.max(np.abs(out - np.pi ** 2 * s.values)))
    assert errs[0] / errs[1] > 3.5


def test_apply_block_diagonal(grid16):
    op = assemble_system(Problem.build(grid16, np.diag([1.0, 2.0])))
    w = eval_field("x*(1-x)", grid16).values
    out = apply(op, VectorField(grid16, np.stack([w, np.zeros_like(w)])))
    assert not np.any(out.values[1])


def test_apply_dimension_mismatch(grid16):
    op = assemble_system(Problem.build(grid16, np.eye(2)))
    with pytest.raises(DimensionError):
        apply(op, VectorField(grid16, np.zeros((3, grid16.n_nodes))))


@pytest.mark.parametrize("dim", [1, 2])
def test_affine_exactness(dim):
    g = Grid(dim, 8)
    A = [[2.0, 0.5], [0.5, 1.0]]
    b = [np.array([[1.0, 0.0], [0.3, -1.0]])] * dim
    op = assemble_system(Problem.build(g, A, B=b))
    W = np.stack([1 + 2 * g.coords[0], 3 - g.coords[-1]])
    out = op.matrix @ g.to_interior(W).reshape(-1)
    deep = g.boundary_distance[g.interior_nodes] >= 2
    slopes = np.zeros((2, dim))
    slopes[0, 0] = 2.0
    slopes[1, -1] += -1.0
    expected = sum(b[ax] @ slopes[:, ax] for ax in range(dim))
    got = out.reshape(2, -1)[:, deep]
    np.testing.assert_allclose(got, np.broadcast_to(expected[:, None], got.shape), atol=1e-10)


@pytest.mark.parametrize("n", [4, 8, 16])
@pytest.mark.parametrize("k", [0.0, 3.0])
def test_m_matrix_baseline(n, k):
    op = assemble_system(Problem.build(Grid(1, n), [[1.0]], k=k))
    dec = zm_decompose(op.dense())
    assert dec.rho < dec.s
    assert np.all(np.linalg.inv(op.dense()) > 0)


def test_diagonal_system_matches_scalar_ops(grid2d):
    grid = grid2d
    A = MatrixField.from_entries([["1+x*y", "0"], ["0", "2+sin(x)"]], grid)
    B = [MatrixField.from_entries([["x", "0"], ["0", "1"]], grid),
         MatrixField.from_entries([["0.5", "0"], ["0", "y"]], grid)]
    op = assemble_system(Problem.build(grid, A, B=B))
    for i in range(2):
        sc = assemble_scalar(A.entry(i, i), [Bx.entry(i, i) for Bx in B], None, grid)
        blk = op.block(i, i).tocoo()
        ref = sc.matrix.tocoo()
        np.testing.assert_array_equal(sorted(zip(blk.row, blk.col, blk.data)),
                                      sorted(zip(ref.row, ref.col, ref.data)))


def test_symmetric_field_gives_symmetric_matrix(grid2d):
    A = MatrixField.from_entries([["2+x", "0.3*sin(y)"], ["0.3*sin(y)", "3"]], grid2d)
    op = assemble_system(Problem.build(grid2d, A))
    M = op.dense()
    assert np.max(np.abs(M - M.T)) <= 1e-12 * np.max(np.abs(M))
    assert op.symmetric


def test_non_elliptic_rejected(grid16):
    with pytest.raises(EllipticityError):
        assemble_system(Problem.build(grid16, [[1.0, 3.0], [3.0, 1.0]]))


def test_spectral_mode_accepts_triangular(grid16):
    A = [[1.0, 0.0], [5.0, 2.0]]
    with pytest.raises(EllipticityError):
        assemble_system(Problem.build(grid16, A))
    op = assemble_system(Problem.build(grid16, A, meta={"ellipticity": "spectral"}))
    assert op.size == 2 * grid16.n_interior


def test_peclet_warning(grid16):
    with pytest.warns(PecletWarning):
        assemble_system(Problem.build(grid16, [[0.01]], B=[[[5.0]]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assemble_system(Problem.build(grid16, [[1.0]], B=[[[1.0]]]))


def test_problem_dimension_checks(grid16):
    with pytest.raises(DimensionError):
        Problem.build(grid16, np.eye(2), K=np.eye(3))
    with pytest.raises(DimensionError):
        Problem.build(grid16, np.eye(2), F=["1"])
