"""Iterative solution of the assembled sparse systems.

BiCGStab with an optional ILU(0) preconditioner, written against a minimal
duck-typed interface: the operator only needs `@` (matrix-vector product)
and the preconditioner only needs `solve`.  A dense partial-pivoting LU
doubles as the reference oracle in the test suite.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

__all__ = [
    "LinAlgError",
    "SolveReport",
    "bicgstab",
    "ilu0",
    "ILU0",
    "dense_solve",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-13

_STALL_WINDOW = 50


class LinAlgError(Exception):
    pass


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    final_residual is the true residual norm ||b - A x||_2 recomputed from
    the returned iterate; converged means final_residual <= tolerance.
    """

    iterations: int
    final_residual: float
    converged: bool
    elapsed: float


def _operator(system):
    if hasattr(system, "matrix"):
        return system.matrix, np.asarray(system.rhs, dtype=float)
    raise TypeError("system must expose .matrix and .rhs")


def bicgstab(system, x0=None, tol: float = DEFAULT_TOL, max_iter: int = 10000,
             precond=None):
    """Preconditioned BiCGStab on system.matrix @ x = system.rhs.

    Returns (x, SolveReport).  On a breakdown (vanishing rho or omega) the
    recursion restarts once from the current iterate; a second breakdown
    raises LinAlgError.  If the residual makes no progress over 50
    consecutive iterations the best iterate found so far is returned with a
    warning and converged=False (unless it already meets tol).
    """
    A, b = _operator(system)
    t0 = time.perf_counter()
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    psolve = precond.solve if precond is not None else (lambda v: v)

    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    best_x = x.copy()
    best_norm = float(np.linalg.norm(r))
    stall = 0
    restarted = False
    it = 0
    while it < max_iter:
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol:
            break
        if rnorm < best_norm * (1.0 - 1e-12):
            best_norm = rnorm
            best_x = x.copy()
            stall = 0
        else:
            stall += 1
            if stall >= _STALL_WINDOW:
                warnings.warn(
                    f"bicgstab stalled after {it} iterations "
                    f"(best residual {best_norm:.3e})",
                    RuntimeWarning,
                )
                x = best_x
                break
        rho_new = float(r_hat @ r)
        if rho_new == 0.0 or (it > 0 and omega == 0.0):
            if restarted:
                raise LinAlgError(
                    f"bicgstab breakdown at iteration {it} "
                    f"(residual {rnorm:.3e})"
                )
            restarted = True
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            continue
        if it == 0:
            p = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
        rho = rho_new
        phat = psolve(p)
        v = A @ phat
        denom = float(r_hat @ v)
        if denom == 0.0:
            if restarted:
                raise LinAlgError(f"bicgstab breakdown at iteration {it}")
            restarted = True
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            continue
        alpha = rho / denom
        s = r - alpha * v
        x = x + alpha * phat
        if np.linalg.norm(s) <= tol:
            r = s
            it += 1
            break
        shat = psolve(s)
        t = A @ shat
        tt = float(t @ t)
        omega = float(t @ s) / tt if tt > 0.0 else 0.0
        x = x + omega * shat
        r = s - omega * t
        it += 1

    final = float(np.linalg.norm(b - A @ x))
    if final > best_norm:
        x = best_x
        final = float(np.linalg.norm(b - A @ x))
    report = SolveReport(
        iterations=it,
        final_residual=final,
        converged=final <= tol,
        elapsed=time.perf_counter() - t0,
    )
    return x, report


@njit(cache=True)
def _ilu0_factor(indptr, indices, data, diag_ptr, n):  # pragma: no cover
    for i in range(n):
        for kk in range(indptr[i], diag_ptr[i]):
            k = indices[kk]
            dkk = data[diag_ptr[k]]
            lik = data[kk] / dkk
            data[kk] = lik
            # subtract l_ik * U[k, j] for j within row i's pattern
            for jj in range(diag_ptr[k] + 1, indptr[k + 1]):
                j = indices[jj]
                for pp in range(kk + 1, indptr[i + 1]):
                    if indices[pp] == j:
                        data[pp] -= lik * data[jj]
                        break


@njit(cache=True)
def _ilu0_solve(indptr, indices, data, diag_ptr, b, out):  # pragma: no cover
    n = b.size
    for i in range(n):
        acc = b[i]
        for kk in range(indptr[i], diag_ptr[i]):
            acc -= data[kk] * out[indices[kk]]
        out[i] = acc
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for kk in range(diag_ptr[i] + 1, indptr[i + 1]):
            acc -= data[kk] * out[indices[kk]]
        out[i] = acc / data[diag_ptr[i]]


class ILU0:
    """Incomplete LU factorization restricted to the matrix's own pattern.

    L (unit diagonal) and U are stored in place of A's entries.  Zero pivots
    are shifted by 1e-12 * max |diag(A)| with a warning.
    """

    def __init__(self, matrix):
        A = sp.csr_matrix(matrix).copy()
        A.sum_duplicates()
        A.sort_indices()
        n = A.shape[0]
        diag_ptr = np.empty(n, dtype=A.indptr.dtype)
        for i in range(n):
            row = A.indices[A.indptr[i]:A.indptr[i + 1]]
            pos = np.searchsorted(row, i)
            if pos == row.size or row[pos] != i:
                raise LinAlgError(f"missing diagonal entry in row {i}")
            diag_ptr[i] = A.indptr[i] + pos
        data = A.data.astype(float)
        shift = 1e-12 * float(np.max(np.abs(data[diag_ptr]))) if n else 0.0
        zero = data[diag_ptr] == 0.0
        if zero.any():
            warnings.warn(
                f"ilu0: {int(zero.sum())} zero pivot(s) shifted by {shift:.3e}",
                RuntimeWarning,
            )
            data[diag_ptr[zero]] = shift
        _ilu0_factor(A.indptr, A.indices, data, diag_ptr, n)
        pivots = data[diag_ptr]
        fixed = pivots == 0.0
        if fixed.any():
            warnings.warn(
                f"ilu0: {int(fixed.sum())} pivot(s) vanished during "
                f"elimination, shifted by {shift:.3e}",
                RuntimeWarning,
            )
            data[diag_ptr[fixed]] = shift
        self.indptr = A.indptr
        self.indices = A.indices
        self.data = data
        self.diag_ptr = diag_ptr
        self.shape = A.shape

    def solve(self, b):
        out = np.empty_like(np.asarray(b, dtype=float))
        _ilu0_solve(self.indptr, self.indices, self.data, self.diag_ptr,
                    np.asarray(b, dtype=float), out)
        return out

    @property
    def L(self) -> sp.csr_matrix:
        data = np.zeros_like(self.data)
        for i in range(self.shape[0]):
            data[self.indptr[i]:self.diag_ptr[i]] = (
                self.data[self.indptr[i]:self.diag_ptr[i]])
            data[self.diag_ptr[i]] = 1.0
        out = sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=self.shape)
        out.eliminate_zeros()
        return out

    @property
    def U(self) -> sp.csr_matrix:
        data = np.zeros_like(self.data)
        for i in range(self.shape[0]):
            data[self.diag_ptr[i]:self.indptr[i + 1]] = (
                self.data[self.diag_ptr[i]:self.indptr[i + 1]])
        out = sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=self.shape)
        out.eliminate_zeros()
        return out


def ilu0(system) -> ILU0:
    matrix = system.matrix if hasattr(system, "matrix") else system
    return ILU0(matrix)


def dense_solve(A, b):
    """Gaussian elimination with partial pivoting (reference oracle)."""
    A = np.array(A, dtype=float)
    if sp.issparse(A) or hasattr(A, "toarray"):
        A = A.toarray()
    b = np.array(b, dtype=float)
    n = b.size
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if A[piv, k] == 0.0:
            raise LinAlgError("singular matrix in dense_solve")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        inv = 1.0 / A[k, k]
        for i in range(k + 1, n):
            m = A[i, k] * inv
            if m != 0.0:
                A[i, k + 1 :] -= m * A[k, k + 1 :]
                b[i] -= m * b[k]
                A[i, k] = 0.0
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1 :] @ x[i + 1 :]) / A[i, i]
    return x
