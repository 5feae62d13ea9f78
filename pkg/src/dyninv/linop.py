"""Matrix-free linear-operator algebra.

Every solver in this package consumes operators only through forward and
adjoint application plus shape queries.  Concrete operator types cover dense
matrices, sparse matrices, diagonals, scaled identities, Kronecker products,
sums of Kronecker products, block diagonals, scalings, and compositions.

Vectorization convention: ``vec`` stacks matrix columns, so for a Kronecker
product ``Q_t (x) Q_s`` acting on ``x = vec(X)`` with ``X`` of shape
``(n_s, n_t)`` the product is ``vec(Q_s @ X @ Q_t.T)``.  This is the single
wire convention used throughout the package.

Operators are immutable after construction (internal factorization caches
aside) and safe to share across threads.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import BudgetExceededError, ConditioningError, ParameterError, ShapeError

# Refusal threshold for materializing operators as dense matrices.
DENSIFY_BUDGET = 4096 * 4096


def _check_vec(v, n, what="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != n:
        raise ShapeError(f"expected {what} of length {n}, got shape {v.shape}")
    return v


class LinearOperator:
    """Base class: a real linear map known through matvecs."""

    def __init__(self, rows: int, cols: int):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative operator shape ({rows}, {cols})")
        self._rows = int(rows)
        self._cols = int(cols)

    @property
    def rows(self) -> int:
        return self._rows

    @property
    def cols(self) -> int:
        return self._cols

    @property
    def shape(self):
        return (self._rows, self._cols)

    # -- implementation hooks -------------------------------------------
    def _matvec(self, v):
        raise NotImplementedError

    def _rmatvec(self, v):
        raise NotImplementedError

    # -- public application ---------------------------------------------
    def apply(self, v):
        """Return ``op @ v``."""
        return self._matvec(_check_vec(v, self._cols))

    def apply_adjoint(self, v):
        """Return ``op.T @ v``."""
        return self._rmatvec(_check_vec(v, self._rows))

    def apply_mat(self, M):
        """Apply the operator to each column of ``M``."""
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != self._cols:
            raise ShapeError(f"expected matrix with {self._cols} rows, got {M.shape}")
        out = np.empty((self._rows, M.shape[1]))
        for j in range(M.shape[1]):
            out[:, j] = self._matvec(M[:, j])
        return out

    def apply_adjoint_mat(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != self._rows:
            raise ShapeError(f"expected matrix with {self._rows} rows, got {M.shape}")
        out = np.empty((self._cols, M.shape[1]))
        for j in range(M.shape[1]):
            out[:, j] = self._rmatvec(M[:, j])
        return out

    # -- SPD extras (optional) ------------------------------------------
    def solve(self, v):
        """Return ``op^{-1} @ v`` for SPD operators that support it."""
        raise NotImplementedError(f"{type(self).__name__} does not support solve()")

    def solve_mat(self, M):
        M = np.asarray(M, dtype=float)
        out = np.empty((self._cols, M.shape[1]))
        for j in range(M.shape[1]):
            out[:, j] = self.solve(M[:, j])
        return out

    def diagonal(self):
        """Diagonal of the operator (square operators only)."""
        if self._rows != self._cols:
            raise ShapeError("diagonal() requires a square operator")
        D = self.to_dense()
        return np.diag(D).copy()

    # -- misc ------------------------------------------------------------
    @property
    def T(self) -> "LinearOperator":
        return AdjointOperator(self)

    def to_dense(self, budget: int | None = None):
        """Materialize the operator as a dense array, subject to a budget."""
        limit = DENSIFY_BUDGET if budget is None else budget
        if self._rows * self._cols > limit:
            raise BudgetExceededError(
                f"refusing to densify {self._rows}x{self._cols} operator "
                f"(budget {limit} entries)"
            )
        return self.apply_mat(np.eye(self._cols))

    def __repr__(self):
        return f"<{type(self).__name__} {self._rows}x{self._cols}>"


class AdjointOperator(LinearOperator):
    """Lazy transpose of another operator."""

    def __init__(self, base: LinearOperator):
        super().__init__(base.cols, base.rows)
        self.base = base

    def _matvec(self, v):
        return self.base._rmatvec(v)

    def _rmatvec(self, v):
        return self.base._matvec(v)

    @property
    def T(self):
        return self.base


class DenseOperator(LinearOperator):
    """Operator backed by an explicit 2-D array."""

    def __init__(self, entries):
        A = np.atleast_2d(np.asarray(entries, dtype=float))
        if A.ndim != 2:
            raise ShapeError("dense operator requires a 2-D array")
        super().__init__(A.shape[0], A.shape[1])
        self.entries = A
        self._chol = None

    def _matvec(self, v):
        return self.entries @ v

    def _rmatvec(self, v):
        return self.entries.T @ v

    def apply_mat(self, M):
        M = np.asarray(M, dtype=float)
        if M.shape[0] != self._cols:
            raise ShapeError(f"expected matrix with {self._cols} rows, got {M.shape}")
        return self.entries @ M

    def apply_adjoint_mat(self, M):
        M = np.asarray(M, dtype=float)
        if M.shape[0] != self._rows:
            raise ShapeError(f"expected matrix with {self._rows} rows, got {M.shape}")
        return self.entries.T @ M

    def _factor(self):
        if self._chol is None:
            if self._rows != self._cols:
                raise ShapeError("solve() requires a square operator")
            try:
                self._chol = sla.cho_factor(self.entries)
            except sla.LinAlgError as exc:
                w = sla.eigvalsh(0.5 * (self.entries + self.entries.T))
                raise ConditioningError(
                    f"Cholesky factorization failed (min eigenvalue {w[0]:.3e})",
                    min_eig=w[0],
                ) from exc
        return self._chol

    def solve(self, v):
        return sla.cho_solve(self._factor(), _check_vec(v, self._cols))

    def solve_mat(self, M):
        return sla.cho_solve(self._factor(), np.asarray(M, dtype=float))

    def diagonal(self):
        if self._rows != self._cols:
            raise ShapeError("diagonal() requires a square operator")
        return np.diag(self.entries).copy()

    def to_dense(self, budget=None):
        return self.entries.copy()


class SparseOperator(LinearOperator):
    """Operator backed by a scipy sparse matrix (e.g. ray-trace systems)."""

    def __init__(self, matrix):
        M = sp.csr_matrix(matrix)
        super().__init__(M.shape[0], M.shape[1])
        self.matrix = M

    def _matvec(self, v):
        return self.matrix @ v

    def _rmatvec(self, v):
        return self.matrix.T @ v

    def apply_mat(self, M):
        M = np.asarray(M, dtype=float)
        if M.shape[0] != self._cols:
            raise ShapeError(f"expected matrix with {self._cols} rows, got {M.shape}")
        return np.asarray(self.matrix @ M)

    def apply_adjoint_mat(self, M):
        M = np.asarray(M, dtype=float)
        if M.shape[0] != self._rows:
            raise ShapeError(f"expected matrix with {self._rows} rows, got {M.shape}")
        return np.asarray(self.matrix.T @ M)

    def to_dense(self, budget=None):
        limit = DENSIFY_BUDGET if budget is None else budget
        if self._rows * self._cols > limit:
            raise BudgetExceededError("refusing to densify sparse operator")
        return self.matrix.toarray()


class DiagonalOperator(LinearOperator):
    """Diagonal operator; used for diagonal noise covariances."""

    def __init__(self, diag, require_positive: bool = False):
        d = np.asarray(diag, dtype=float).ravel()
        if require_positive and np.any(d <= 0):
            raise ParameterError("diagonal covariance requires positive entries")
        super().__init__(d.size, d.size)
        self.diag = d

    def _matvec(self, v):
        return self.diag * v

    def _rmatvec(self, v):
        return self.diag * v

    def apply_mat(self, M):
        return self.diag[:, None] * np.asarray(M, dtype=float)

    def solve(self, v):
        return _check_vec(v, self._cols) / self.diag

    def solve_mat(self, M):
        return np.asarray(M, dtype=float) / self.diag[:, None]

    def sqrt_apply(self, v):
        return np.sqrt(self.diag) * v

    def inv_sqrt_apply(self, v):
        return v / np.sqrt(self.diag)

    def diagonal(self):
        return self.diag.copy()

    def to_dense(self, budget=None):
        return np.diag(self.diag)


class ScaledIdentityOperator(DiagonalOperator):
    """sigma^2 * I of a given dimension."""

    def __init__(self, scale: float, n: int):
        if scale <= 0:
            raise ParameterError("scaled identity covariance requires scale > 0")
        super().__init__(np.full(n, float(scale)))
        self.scale = float(scale)


def identity(n: int) -> ScaledIdentityOperator:
    return ScaledIdentityOperator(1.0, n)


class KroneckerOperator(LinearOperator):
    """Kronecker product ``left (x) right`` applied via the reshape identity.

    ``left`` is the temporal factor (e.g. Q_t), ``right`` the spatial factor
    (e.g. Q_s); application costs one batch of matvecs per factor instead of
    one dense product of the full Kronecker matrix.
    """

    def __init__(self, left: LinearOperator, right: LinearOperator):
        super().__init__(left.rows * right.rows, left.cols * right.cols)
        self.left = left
        self.right = right

    def _matvec(self, v):
        X = v.reshape(self.right.cols, self.left.cols, order="F")
        Y = self.right.apply_mat(X)
        Z = self.left.apply_mat(Y.T).T
        return Z.reshape(-1, order="F")

    def _rmatvec(self, v):
        X = v.reshape(self.right.rows, self.left.rows, order="F")
        Y = self.right.apply_adjoint_mat(X)
        Z = self.left.apply_adjoint_mat(Y.T).T
        return Z.reshape(-1, order="F")

    def solve(self, v):
        v = _check_vec(v, self._cols)
        X = v.reshape(self.right.cols, self.left.cols, order="F")
        Y = self.right.solve_mat(X)
        Z = self.left.solve_mat(Y.T).T
        return Z.reshape(-1, order="F")

    def diagonal(self):
        dl = self.left.diagonal()
        dr = self.right.diagonal()
        return np.outer(dr, dl).reshape(-1, order="F")

    def to_dense(self, budget=None):
        limit = DENSIFY_BUDGET if budget is None else budget
        if self._rows * self._cols > limit:
            raise BudgetExceededError("refusing to densify Kronecker operator")
        return np.kron(self.left.to_dense(limit), self.right.to_dense(limit))


class SumKroneckerOperator(LinearOperator):
    """Coefficient-weighted sum of Kronecker products with a common shape."""

    def __init__(self, terms):
        terms = [(float(c), l, r) for (c, l, r) in terms]
        if not terms:
            raise ParameterError("sum of Kronecker products requires at least one term")
        shapes = {
            (l.rows * r.rows, l.cols * r.cols) for (_, l, r) in terms
        }
        if len(shapes) != 1:
            raise ShapeError(f"Kronecker terms have inconsistent shapes: {shapes}")
        rows, cols = shapes.pop()
        super().__init__(rows, cols)
        self.terms = terms
        self._kron = [KroneckerOperator(l, r) for (_, l, r) in terms]

    def _matvec(self, v):
        out = np.zeros(self._rows)
        for (c, _, _), K in zip(self.terms, self._kron):
            out += c * K._matvec(v)
        return out

    def _rmatvec(self, v):
        out = np.zeros(self._cols)
        for (c, _, _), K in zip(self.terms, self._kron):
            out += c * K._rmatvec(v)
        return out

    def diagonal(self):
        out = np.zeros(self._rows)
        for (c, _, _), K in zip(self.terms, self._kron):
            out += c * K.diagonal()
        return out

    def to_dense(self, budget=None):
        limit = DENSIFY_BUDGET if budget is None else budget
        if self._rows * self._cols > limit:
            raise BudgetExceededError("refusing to densify SumKronecker operator")
        out = np.zeros(self.shape)
        for (c, _, _), K in zip(self.terms, self._kron):
            out += c * K.to_dense(limit)
        return out


class BlockDiagOperator(LinearOperator):
    """Block-diagonal operator; blocks may have differing row counts."""

    def __init__(self, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ParameterError("block-diagonal operator requires at least one block")
        rows = sum(b.rows for b in blocks)
        cols = sum(b.cols for b in blocks)
        super().__init__(rows, cols)
        self.blocks = blocks
        self._row_ofs = np.cumsum([0] + [b.rows for b in blocks])
        self._col_ofs = np.cumsum([0] + [b.cols for b in blocks])

    def _matvec(self, v):
        out = np.empty(self._rows)
        for i, b in enumerate(self.blocks):
            out[self._row_ofs[i]:self._row_ofs[i + 1]] = b.apply(
                v[self._col_ofs[i]:self._col_ofs[i + 1]]
            )
        return out

    def _rmatvec(self, v):
        out = np.empty(self._cols)
        for i, b in enumerate(self.blocks):
            out[self._col_ofs[i]:self._col_ofs[i + 1]] = b.apply_adjoint(
                v[self._row_ofs[i]:self._row_ofs[i + 1]]
            )
        return out

    def solve(self, v):
        v = _check_vec(v, self._cols)
        out = np.empty(self._cols)
        for i, b in enumerate(self.blocks):
            out[self._col_ofs[i]:self._col_ofs[i + 1]] = b.solve(
                v[self._col_ofs[i]:self._col_ofs[i + 1]]
            )
        return out

    def diagonal(self):
        return np.concatenate([b.diagonal() for b in self.blocks])

    def to_dense(self, budget=None):
        limit = DENSIFY_BUDGET if budget is None else budget
        if self._rows * self._cols > limit:
            raise BudgetExceededError("refusing to densify block-diagonal operator")
        out = np.zeros(self.shape)
        for i, b in enumerate(self.blocks):
            out[
                self._row_ofs[i]:self._row_ofs[i + 1],
                self._col_ofs[i]:self._col_ofs[i + 1],
            ] = b.to_dense(limit)
        return out


class ScaledOperator(LinearOperator):
    """alpha * op."""

    def __init__(self, alpha: float, base: LinearOperator):
        super().__init__(base.rows, base.cols)
        self.alpha = float(alpha)
        self.base = base

    def _matvec(self, v):
        return self.alpha * self.base._matvec(v)

    def _rmatvec(self, v):
        return self.alpha * self.base._rmatvec(v)

    def apply_mat(self, M):
        return self.alpha * self.base.apply_mat(M)

    def diagonal(self):
        return self.alpha * self.base.diagonal()


class CompositionOperator(LinearOperator):
    """Composition ``ops[0] @ ops[1] @ ... @ ops[-1]`` (applied right to left).

    The adjoint is the reversed composition of adjoints.
    """

    def __init__(self, *ops):
        if not ops:
            raise ParameterError("composition requires at least one operator")
        for a, b in zip(ops[:-1], ops[1:]):
            if a.cols != b.rows:
                raise ShapeError(f"cannot compose {a.shape} with {b.shape}")
        super().__init__(ops[0].rows, ops[-1].cols)
        self.ops = tuple(ops)

    def _matvec(self, v):
        for op in reversed(self.ops):
            v = op._matvec(v)
        return v

    def _rmatvec(self, v):
        for op in self.ops:
            v = op._rmatvec(v)
        return v


# ----------------------------------------------------------------------
# Functional surface
# ----------------------------------------------------------------------

def apply(op: LinearOperator, v):
    """Forward application ``op @ v``."""
    return op.apply(v)


def apply_adjoint(op: LinearOperator, v):
    """Adjoint application ``op.T @ v``."""
    return op.apply_adjoint(v)


def to_dense(op: LinearOperator, budget: int | None = None):
    """Materialize an operator densely, refusing beyond the entry budget."""
    return op.to_dense(budget)


def kron_matvec_reshaped(Q_t, Q_s, x):
    """Evaluate ``(Q_t (x) Q_s) @ x`` via ``vec(Q_s X Q_t.T)``.

    Factors may be LinearOperators or plain arrays.
    """
    if not isinstance(Q_t, LinearOperator):
        Q_t = DenseOperator(Q_t)
    if not isinstance(Q_s, LinearOperator):
        Q_s = DenseOperator(Q_s)
    x = _check_vec(x, Q_t.cols * Q_s.cols)
    return KroneckerOperator(Q_t, Q_s)._matvec(x)


def aslinearoperator(x) -> LinearOperator:
    """Wrap an ndarray or sparse matrix; pass LinearOperators through."""
    if isinstance(x, LinearOperator):
        return x
    if sp.issparse(x):
        return SparseOperator(x)
    return DenseOperator(np.asarray(x, dtype=float))
