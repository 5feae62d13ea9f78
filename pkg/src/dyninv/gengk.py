"""Generalized Golub-Kahan bidiagonalization in the R^{-1} and Q inner products.

Produces a small lower-bidiagonal matrix together with bases U and V that are
orthonormal in the weighted inner products.  Optional full reorthogonalization
(two-pass classical Gram-Schmidt in the weighted inner products) is available;
it is recommended whenever the factorization feeds variance estimation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .linop import LinearOperator

# Relative threshold below which a new alpha/beta is declared a breakdown.
BREAKDOWN_RTOL = 1e-14


@dataclass
class Bidiagonal:
    """(k+1) x k lower bidiagonal with diagonal ``alphas`` and subdiagonal ``betas``."""

    alphas: np.ndarray
    betas: np.ndarray

    @property
    def k(self) -> int:
        return len(self.alphas)

    def to_dense(self) -> np.ndarray:
        k = self.k
        B = np.zeros((k + 1, k))
        B[np.arange(k), np.arange(k)] = self.alphas
        B[np.arange(1, k + 1), np.arange(k)] = self.betas
        return B


@dataclass
class GenGKFactorization:
    """State of the bidiagonalization after k completed steps.

    Stores the bases fully (hybrid solvers need all of V), plus the cached
    products Q v_i and R^{-1} u_i that the recurrences and weighted
    reorthogonalization reuse.
    """

    A: LinearOperator
    R: LinearOperator
    Q: LinearOperator
    b: np.ndarray
    beta1: float
    reorthogonalize: bool = False
    U: list = field(default_factory=list)        # u_1 .. u_{k+1}
    V: list = field(default_factory=list)        # v_1 .. v_k
    QV: list = field(default_factory=list)       # Q v_i, aligned with V
    RinvU: list = field(default_factory=list)    # R^{-1} u_i, aligned with U
    alphas: list = field(default_factory=list)   # alpha_1 .. alpha_k
    betas: list = field(default_factory=list)    # beta_2 .. beta_{k+1}
    breakdown: int | None = None                 # step index at which it occurred

    @property
    def steps(self) -> int:
        """Number of completed bidiagonal columns (length of betas)."""
        return len(self.betas)

    def bidiagonal(self, k: int | None = None) -> Bidiagonal:
        if k is None:
            k = self.steps
        return Bidiagonal(np.asarray(self.alphas[:k]), np.asarray(self.betas[:k]))

    def U_matrix(self, k: int | None = None) -> np.ndarray:
        k = self.steps if k is None else k
        return np.column_stack(self.U[: k + 1])

    def V_matrix(self, k: int | None = None) -> np.ndarray:
        k = self.steps if k is None else k
        return np.column_stack(self.V[:k])

    def QV_matrix(self, k: int | None = None) -> np.ndarray:
        k = self.steps if k is None else k
        return np.column_stack(self.QV[:k])

    @property
    def breakdown_tol(self) -> float:
        a1 = self.alphas[0] if self.alphas else 0.0
        return BREAKDOWN_RTOL * (self.beta1 + a1)


def _weighted_norm_sq(v, Mv, tol: float = 0.0) -> float:
    s = float(np.dot(v, Mv))
    if s < 0:
        # benign at breakdown, where v itself has collapsed to rounding noise
        if np.sqrt(-s) > tol:
            warnings.warn("weighted norm clamped at zero; operator may have "
                          "lost positive definiteness", RuntimeWarning)
        s = 0.0
    return s


def gengk_init(A: LinearOperator, R: LinearOperator, Q: LinearOperator, b,
               reorthogonalize: bool = False) -> GenGKFactorization:
    """Initialize the factorization: beta_1, u_1, alpha_1, v_1."""
    b = np.asarray(b, dtype=float).ravel()
    if b.shape[0] != A.rows:
        raise DegenerateInputError(f"b has length {b.size}, expected {A.rows}")
    Rinv_b = R.solve(b)
    beta1 = np.sqrt(_weighted_norm_sq(b, Rinv_b))
    if beta1 == 0.0:
        raise DegenerateInputError("b = 0: gen-GK iteration undefined")
    u1 = b / beta1
    fact = GenGKFactorization(A=A, R=R, Q=Q, b=b, beta1=beta1,
                              reorthogonalize=reorthogonalize)
    fact.U.append(u1)
    fact.RinvU.append(Rinv_b / beta1)

    w = A.apply_adjoint(fact.RinvU[0])
    Qw = Q.apply(w)
    alpha1 = np.sqrt(_weighted_norm_sq(w, Qw))
    if alpha1 <= BREAKDOWN_RTOL * beta1:
        fact.alphas.append(0.0)
        fact.breakdown = 0
        return fact
    fact.alphas.append(alpha1)
    fact.V.append(w / alpha1)
    fact.QV.append(Qw / alpha1)
    return fact


def _reorth_u(fact: GenGKFactorization, u, Rinv_u):
    # two-pass classical Gram-Schmidt in the R^{-1} inner product
    for _ in range(2):
        coeffs = np.array([np.dot(ru, u) for ru in fact.RinvU])
        if not np.any(coeffs):
            break
        for c, uj, ruj in zip(coeffs, fact.U, fact.RinvU):
            u = u - c * uj
            Rinv_u = Rinv_u - c * ruj
    return u, Rinv_u


def _reorth_v(fact: GenGKFactorization, v, Qv):
    for _ in range(2):
        coeffs = np.array([np.dot(qv, v) for qv in fact.QV])
        if not np.any(coeffs):
            break
        for c, vj, qvj in zip(coeffs, fact.V, fact.QV):
            v = v - c * vj
            Qv = Qv - c * qvj
    return v, Qv


def gengk_step(fact: GenGKFactorization) -> GenGKFactorization:
    """Extend the factorization by one step (in place; the state is returned).

    Appends u_{i+1}, beta_{i+1} and, unless breakdown occurs, v_{i+1},
    alpha_{i+1}.  Breakdown is a benign termination, not a failure.
    """
    if fact.breakdown is not None:
        raise RuntimeError("cannot step a broken-down factorization")
    A, R, Q = fact.A, fact.R, fact.Q
    i = len(fact.V)  # current step index (1-based alpha_i exists)

    u = A.apply(fact.QV[i - 1]) - fact.alphas[i - 1] * fact.U[i - 1]
    Rinv_u = R.solve(u)
    if fact.reorthogonalize:
        u, Rinv_u = _reorth_u(fact, u, Rinv_u)
    beta = np.sqrt(_weighted_norm_sq(u, Rinv_u, fact.breakdown_tol))
    if beta <= fact.breakdown_tol:
        fact.betas.append(0.0)
        fact.breakdown = i
        return fact
    fact.betas.append(beta)
    fact.U.append(u / beta)
    fact.RinvU.append(Rinv_u / beta)

    v = A.apply_adjoint(fact.RinvU[i]) - beta * fact.V[i - 1]
    Qv = Q.apply(v)
    if fact.reorthogonalize:
        v, Qv = _reorth_v(fact, v, Qv)
    alpha = np.sqrt(_weighted_norm_sq(v, Qv, fact.breakdown_tol))
    if alpha <= fact.breakdown_tol:
        fact.alphas.append(0.0)
        fact.breakdown = i
        return fact
    fact.alphas.append(alpha)
    fact.V.append(v / alpha)
    fact.QV.append(Qv / alpha)
    return fact


def gengk(A: LinearOperator, R: LinearOperator, Q: LinearOperator, b,
          k: int, reorthogonalize: bool = False) -> GenGKFactorization:
    """Run up to ``k`` gen-GK steps, stopping early on breakdown."""
    fact = gengk_init(A, R, Q, b, reorthogonalize)
    while fact.breakdown is None and fact.steps < k:
        gengk_step(fact)
    return fact


def krylov_basis_span_check(fact: GenGKFactorization) -> dict:
    """Residuals of the four gen-GK relations for a (densifiable) factorization.

    Returns relative Frobenius residuals of b = U beta_1 e_1,
    A Q V = U B, A' R^{-1} U = V B' + alpha_{k+1} v_{k+1} e_{k+1}',
    and the max deviations of the two weighted Gram matrices from identity.
    """
    k = fact.steps
    report = {"k": k}
    bnorm = np.linalg.norm(fact.b)
    report["resid_b"] = (
        np.linalg.norm(fact.U[0] * fact.beta1 - fact.b) / bnorm if bnorm else 0.0
    )
    if k == 0:
        return report

    kk = min(k, len(fact.V))
    ncol_u = len(fact.U)  # kk+1 normally, kk after a beta-breakdown
    B = fact.bidiagonal(kk).to_dense()[:ncol_u, :]
    U = np.column_stack(fact.U)
    V = fact.V_matrix(kk)
    QV = fact.QV_matrix(kk)
    Bnorm = np.linalg.norm(B)

    AQV = fact.A.apply_mat(QV)
    report["resid_AQV"] = np.linalg.norm(AQV - U @ B) / Bnorm

    RinvU = np.column_stack(fact.RinvU)
    AtRinvU = fact.A.apply_adjoint_mat(RinvU)
    rhs = V @ B.T
    if len(fact.V) > kk:
        rhs[:, -1] += fact.alphas[kk] * fact.V[kk]
    report["resid_AtRinvU"] = np.linalg.norm(AtRinvU - rhs) / Bnorm

    report["orth_U"] = np.max(np.abs(U.T @ RinvU - np.eye(ncol_u)))
    report["orth_V"] = np.max(np.abs(V.T @ QV - np.eye(kk)))
    return report


def dump_diagnostics_csv(fact: GenGKFactorization, path) -> None:
    """Write per-iteration alpha/beta and relation residuals as CSV."""
    report = krylov_basis_span_check(fact)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "alpha", "beta", "orth_U", "orth_V", "rec_resid"])
        for i in range(fact.steps):
            writer.writerow([
                i + 1,
                repr(fact.alphas[i]),
                repr(fact.betas[i]),
                repr(report.get("orth_U", "")),
                repr(report.get("orth_V", "")),
                repr(max(report.get("resid_AQV", 0.0),
                         report.get("resid_AtRinvU", 0.0))),
            ])
