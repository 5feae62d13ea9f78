import numpy as np
import numpy.testing as npt
import pytest

from dyninv.errors import BudgetExceededError, ShapeError
from dyninv.linop import (BlockDiagOperator, CompositionOperator, DenseOperator,
                          DiagonalOperator, KroneckerOperator, ScaledIdentityOperator,
                          ScaledOperator, SparseOperator, SumKroneckerOperator,
                          identity, kron_matvec_reshaped, aslinearoperator)

from conftest import random_spd


def test_dense_apply_column_extraction():
    op = DenseOperator([[1, 2], [3, 4]])
    npt.assert_allclose(op.apply([1, 0]), [1, 3])
    npt.assert_allclose(op.apply_adjoint([1, 0]), [1, 2])


def test_scaled_identity_apply():
    op = ScaledIdentityOperator(4.0, 3)
    npt.assert_allclose(op.apply([1, 2, 3]), [4, 8, 12])
    npt.assert_allclose(op.to_dense(), 4.0 * np.eye(3))
    npt.assert_allclose(ScaledIdentityOperator(2.0, 2).to_dense(), 2.0 * np.eye(2))


def test_kronecker_matvec_example():
    # Kron([[1,0],[0,2]], [[2,1],[1,2]]) applied to vec(I_2) = (1,0,0,1)
    Qt = DenseOperator([[1, 0], [0, 2]])
    Qs = DenseOperator([[2, 1], [1, 2]])
    K = KroneckerOperator(Qt, Qs)
    v = np.array([1.0, 0.0, 0.0, 1.0])
    npt.assert_allclose(K.apply(v), [2, 1, 2, 4])
    # reshaped path agrees
    npt.assert_allclose(kron_matvec_reshaped(Qt, Qs, v), [2, 1, 2, 4])
    # adjoint agrees with the dense Kronecker product transpose
    dense = np.kron(Qt.entries, Qs.entries)
    w = np.array([2.0, 1.0, 2.0, 4.0])
    npt.assert_allclose(K.apply_adjoint(w), dense.T @ w)


def test_kronecker_to_dense_example():
    K = KroneckerOperator(DenseOperator([[1, 1], [0, 1]]), DenseOperator([[2]]))
    npt.assert_allclose(K.to_dense(), [[2, 2], [0, 2]])


def test_kron_matvec_identity_and_scalar():
    x = np.arange(4.0)
    npt.assert_allclose(kron_matvec_reshaped(np.eye(2), np.eye(2), x), x)
    Qs = np.array([[1.0, 2.0], [3.0, 4.0]])
    npt.assert_allclose(kron_matvec_reshaped([[3.0]], Qs, [1.0, 1.0]),
                        3.0 * Qs @ [1.0, 1.0])


def test_kronecker_agreement_random(rng):
    for _ in range(5):
        p, q, r, s = rng.integers(2, 9, size=4)
        L = rng.standard_normal((p, q))
        Rm = rng.standard_normal((r, s))
        K = KroneckerOperator(DenseOperator(L), DenseOperator(Rm))
        dense = np.kron(L, Rm)
        x = rng.standard_normal(q * s)
        y = rng.standard_normal(p * r)
        npt.assert_allclose(K.apply(x), dense @ x, rtol=1e-12, atol=1e-12)
        npt.assert_allclose(K.apply_adjoint(y), dense.T @ y, rtol=1e-12, atol=1e-12)
        npt.assert_allclose(kron_matvec_reshaped(L, Rm, x), dense @ x,
                            rtol=1e-12, atol=1e-12)


def test_kronecker_solve_and_diagonal(rng):
    Qt = random_spd(rng, 3)
    Qs = random_spd(rng, 4)
    K = KroneckerOperator(DenseOperator(Qt), DenseOperator(Qs))
    dense = np.kron(Qt, Qs)
    x = rng.standard_normal(12)
    npt.assert_allclose(K.solve(dense @ x), x, rtol=1e-9, atol=1e-10)
    npt.assert_allclose(K.diagonal(), np.diag(dense), rtol=1e-13)


def test_block_diag():
    op = BlockDiagOperator([DenseOperator([[1]]), DenseOperator([[3]])])
    npt.assert_allclose(op.to_dense(), [[1, 0], [0, 3]])
    op2 = BlockDiagOperator([DenseOperator([[1]]), DenseOperator([[2]])])
    npt.assert_allclose(op2.apply_adjoint([3, 5]), [3, 10])


def test_block_diag_equals_kron_with_identity(rng):
    B = rng.standard_normal((3, 4))
    n_t = 5
    bd = BlockDiagOperator([DenseOperator(B) for _ in range(n_t)])
    K = KroneckerOperator(identity(n_t), DenseOperator(B))
    x = rng.standard_normal(4 * n_t)
    npt.assert_allclose(bd.apply(x), K.apply(x), rtol=1e-13, atol=1e-13)


def test_sum_kronecker_single_term_equals_kron(rng):
    L = DenseOperator(rng.standard_normal((3, 3)))
    Rm = DenseOperator(rng.standard_normal((4, 4)))
    S = SumKroneckerOperator([(1.0, L, Rm)])
    K = KroneckerOperator(L, Rm)
    x = rng.standard_normal(12)
    npt.assert_allclose(S.apply(x), K.apply(x))
    npt.assert_allclose(S.to_dense(), K.to_dense())


def test_adjoint_consistency_all_types(rng):
    n_t, n_s = 3, 4
    ops = [
        DenseOperator(rng.standard_normal((5, 7))),
        SparseOperator(np.diag(rng.random(6) + 0.5)),
        DiagonalOperator(rng.random(6) + 0.1),
        ScaledIdentityOperator(2.5, 6),
        KroneckerOperator(DenseOperator(rng.standard_normal((n_t, n_t))),
                          DenseOperator(rng.standard_normal((n_s, n_s)))),
        SumKroneckerOperator([
            (0.7, DenseOperator(rng.standard_normal((n_t, n_t))),
             DenseOperator(rng.standard_normal((n_s, n_s)))),
            (1.3, DenseOperator(rng.standard_normal((n_t, n_t))),
             DenseOperator(rng.standard_normal((n_s, n_s)))),
        ]),
        BlockDiagOperator([DenseOperator(rng.standard_normal((2, 3))),
                           DenseOperator(rng.standard_normal((4, 3)))]),
        ScaledOperator(-1.5, DenseOperator(rng.standard_normal((4, 6)))),
        CompositionOperator(DenseOperator(rng.standard_normal((3, 5))),
                            DenseOperator(rng.standard_normal((5, 4)))),
    ]
    for op in ops:
        x = rng.standard_normal(op.cols)
        y = rng.standard_normal(op.rows)
        lhs = np.dot(op.apply(x), y)
        rhs = np.dot(x, op.apply_adjoint(y))
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(y), type(op)


def test_to_dense_matches_columns(rng):
    op = CompositionOperator(DenseOperator(rng.standard_normal((3, 4))),
                             DenseOperator(rng.standard_normal((4, 5))))
    D = op.to_dense()
    for j in range(5):
        e = np.zeros(5)
        e[j] = 1.0
        npt.assert_allclose(D[:, j], op.apply(e))


def test_densify_budget_refusal():
    op = DenseOperator(np.zeros((3, 3)))
    with pytest.raises(BudgetExceededError):
        op.T.to_dense(budget=4)


def test_shape_errors():
    op = DenseOperator([[1, 2], [3, 4]])
    with pytest.raises(ShapeError):
        op.apply([1, 2, 3])
    with pytest.raises(ShapeError):
        op.apply_adjoint([1, 2, 3])
    with pytest.raises(ShapeError):
        CompositionOperator(DenseOperator(np.zeros((2, 3))),
                            DenseOperator(np.zeros((2, 3))))


def test_aslinearoperator_passthrough(rng):
    M = rng.standard_normal((3, 3))
    assert isinstance(aslinearoperator(M), DenseOperator)
    op = DenseOperator(M)
    assert aslinearoperator(op) is op
