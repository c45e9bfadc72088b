"""Sparse linear algebra kernels for the Newton and Douglas-Rachford steps.

``spd_factorize`` wraps a SuperLU factorization in symmetric mode (diagonal
pivoting, fill-reducing ordering) so that positive definiteness shows up in
the pivots. ``gmres`` is a restarted GMRES with modified Gram-Schmidt and
Givens rotations on an operator-defined matrix action; it reports the exact
number of Arnoldi steps, which feeds the benchmark telemetry. The
``ReducedOperator`` realizes the Schur-complement reduction of the Newton
system onto the slip-velocity and pressure unknowns with one inner solve
per application.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleProblem


class FactorizationError(Exception):
    """Raised when a matrix expected to be positive definite is not."""


class SpdFactor:
    """Direct factorization of a sparse symmetric positive definite matrix."""

    def __init__(self, matrix: sp.spmatrix):
        csc = sp.csc_matrix(matrix)
        if csc.shape[0] != csc.shape[1]:
            raise FactorizationError("matrix is not square")
        self.shape = csc.shape
        if csc.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(
                csc,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise FactorizationError(f"factorization failed: {exc}") from exc
        pivots = self._lu.U.diagonal()
        bad = pivots <= 0.0
        if np.any(bad):
            raise FactorizationError(
                f"non-positive pivot at index {int(np.nonzero(bad)[0][0])}"
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros_like(rhs)
        return self._lu.solve(rhs)


def spd_factorize(matrix: sp.spmatrix) -> SpdFactor:
    return SpdFactor(matrix)


class GmresResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool


def gmres(
    op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float,
    max_iters: int = 10000,
    restart: int = 200,
    callback: Callable[[float], None] | None = None,
) -> GmresResult:
    """Restarted GMRES for ``op(x) = rhs`` with relative residual target.

    Returns the approximate solution, the total number of inner (Arnoldi)
    iterations and a convergence flag. A happy breakdown counts as
    convergence; hitting the iteration cap returns the best iterate seen
    with ``converged=False``. ``callback`` receives the running residual
    norm after every inner iteration.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError(f"gmres tolerance must lie in (0, 1), got {tol}")
    n = rhs.shape[0]
    b_norm = float(np.linalg.norm(rhs))
    if b_norm == 0.0:
        return GmresResult(np.zeros(n), 0, True)

    x = np.zeros(n)
    best_x, best_res = x.copy(), 1.0
    total = 0
    while total < max_iters:
        r = rhs - op(x)
        beta = float(np.linalg.norm(r))
        rel = beta / b_norm
        if rel < best_res:
            best_x, best_res = x.copy(), rel
        if rel <= tol:
            return GmresResult(x, total, True)

        m = min(restart, max_iters - total)
        basis = np.zeros((m + 1, n))
        basis[0] = r / beta
        hess = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        happy = False
        for j in range(m):
            # copy: op may return its argument (e.g. the identity)
            w = np.array(op(basis[j]), dtype=float)
            for i in range(j + 1):
                hess[i, j] = basis[i] @ w
                w -= hess[i, j] * basis[i]
            hess[j + 1, j] = float(np.linalg.norm(w))
            total += 1
            j_done = j + 1
            if hess[j + 1, j] > 1e-300:
                basis[j + 1] = w / hess[j + 1, j]
            else:
                happy = True
            # Apply stored rotations, then a new one to keep H triangular.
            for i in range(j):
                temp = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = temp
            denom = float(np.hypot(hess[j, j], hess[j + 1, j]))
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = hess[j, j] / denom, hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            if callback is not None:
                callback(abs(g[j + 1]))
            if happy or abs(g[j + 1]) <= tol * b_norm:
                break

        y = np.linalg.solve(
            hess[:j_done, :j_done], g[:j_done]
        ) if j_done else np.zeros(0)
        x = x + basis[:j_done].T @ y
        rel = float(np.linalg.norm(rhs - op(x))) / b_norm
        if rel < best_res:
            best_x, best_res = x.copy(), rel
        if happy or rel <= tol:
            return GmresResult(x, total, True)
    return GmresResult(best_x, total, False)


def _apply_blocks(blocks: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Block-diagonal action of (n, 3, 3) blocks on a flat 3n vector."""
    if blocks.shape[0] == 0:
        return np.zeros(0)
    return np.einsum("nij,nj->ni", blocks, v.reshape(-1, 3)).ravel()


@dataclass
class ReducedOperator:
    """Schur-complement reduction of the Newton system onto (du_N, dp_hat).

    The action realizes the block matrix

        [ P (A_NN - A_IN^T A_II^-1 A_IN) + W | -P (B_N^T - A_IN^T A_II^-1 B_I^T) ]
        [ B_N - B_I A_II^-1 A_IN            |  E + B_I A_II^-1 B_I^T            ]

    with P, W block diagonal over slip nodes. One SPD solve with the A_II
    factor (two triangular solves) is needed per application.
    """

    problem: SaddleProblem
    a_ii_factor: SpdFactor
    p_blocks: np.ndarray
    w_blocks: np.ndarray

    @property
    def size(self) -> int:
        return 3 * self.problem.n_s + self.problem.n_p

    def apply(self, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.size,):
            raise ValueError(f"operand has size {v.shape}, expected {(self.size,)}")
        pr = self.problem
        k = 3 * pr.n_s
        du_n, dp = v[:k], v[k:]
        inner = self.a_ii_factor.solve(pr.A_IN @ du_n - pr.B_I.T @ dp)
        top_raw = pr.A_NN @ du_n - pr.B_N.T @ dp - pr.A_IN.T @ inner
        top = _apply_blocks(self.p_blocks, top_raw) + _apply_blocks(
            self.w_blocks, du_n
        )
        bottom = pr.B_N @ du_n + pr.E @ dp - pr.B_I @ inner
        return np.concatenate([top, bottom])


def reduced_apply(rop: ReducedOperator, v: np.ndarray) -> np.ndarray:
    return rop.apply(v)


def reduced_diagonal(rop: ReducedOperator) -> np.ndarray:
    """Cheap positive approximation of the reduced-matrix diagonal.

    Used as a Jacobi preconditioner: the blocks of the reduced system live
    on very different scales (viscous terms ~ nu h, pressure terms ~ h^3 /
    nu), which plain GMRES resolves slowly. The elimination terms are
    approximated by the A_II diagonal.
    """
    pr = rop.problem
    n_s = pr.n_s
    if n_s:
        a_nn_diag = pr.A_NN.diagonal().reshape(-1, 3)
        top_blocks = (
            np.einsum("nij,nj,njk->nik", rop.p_blocks, a_nn_diag, rop.p_blocks)
            + rop.w_blocks
        )
        d_top = np.einsum("nii->ni", top_blocks).ravel()
    else:
        d_top = np.zeros(0)
    a_ii_diag = pr.A_II.diagonal()
    b_sq = pr.B_I.multiply(pr.B_I)
    d_bot = pr.E.diagonal() + b_sq @ (1.0 / np.maximum(a_ii_diag, 1e-300))
    d = np.concatenate([d_top, d_bot])
    floor = 1e-14 * max(float(d.max()), 1.0) if d.size else 1.0
    return np.maximum(d, floor)


class DrResolvent:
    """Factorization of (I + lam * M) with M the saddle operator matrix."""

    def __init__(self, problem: SaddleProblem, lam: float):
        if lam <= 0:
            raise ValueError(f"resolvent parameter must be positive, got {lam}")
        self.lam = lam
        m = sp.bmat(
            [[problem.A_kappa, -problem.B.T], [problem.B, problem.E]], format="csc"
        )
        system = (sp.identity(problem.size, format="csc") + lam * m).tocsc()
        try:
            self._lu = spla.splu(system)
        except RuntimeError as exc:  # monotone M + I cannot be singular
            raise FactorizationError(f"resolvent factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (I + lam M) x = rhs."""
        return self._lu.solve(rhs)


def dr_resolvent_factorize(problem: SaddleProblem, lam: float) -> DrResolvent:
    return DrResolvent(problem, lam)
