import numpy as np
import pytest

from dyninv.linop import DenseOperator


def random_spd(rng, n, cond=100.0):
    """Random SPD matrix with condition number about ``cond``."""
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.logspace(0, -np.log10(cond), n)
    return (U * w) @ U.T


def random_problem(rng, m, n, cond=100.0):
    """Random (A, R, Q, b) tuple with dense SPD weights."""
    A = rng.standard_normal((m, n))
    R = random_spd(rng, m, cond)
    Q = random_spd(rng, n, cond)
    b = rng.standard_normal(m)
    return A, R, Q, b


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def as_op(M):
    return DenseOperator(np.asarray(M, dtype=float))
