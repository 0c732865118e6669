"""Sparse SPD solves and small dense solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    def __init__(self, msg, residual=np.nan):
        super().__init__(msg)
        self.residual = residual


class SingularMatrixError(SolverError):
    pass


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0


def symmetry_defect(A) -> float:
    """max|A - A^T| / max|A|."""
    A = sps.csr_matrix(A)
    d = A - A.T
    big = abs(A).max()
    return float(abs(d).max() / big) if big > 0 else 0.0


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def _refine(A, solve, b, steps: int):
    """Solve with an existing factorization followed by iterative refinement."""
    x = solve(b)
    for _ in range(steps):
        x = x + solve(b - A @ x)
    return x


def solve_spd(A, b, method: str = "auto", rtol: float = 1e-10, maxiter: int | None = None, refine: int = 2):
    """Solve A x = b for symmetric positive definite A.

    ``method`` is ``"auto"`` (dense Cholesky below DENSE_LIMIT unknowns,
    sparse LU above), ``"direct"``, ``"dense"`` or ``"cg"`` (Jacobi
    preconditioned).  Returns (x, SolveInfo); raises SolverError when the
    relative residual exceeds ``rtol``.  The direct methods apply ``refine``
    steps of iterative refinement.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if n == 0:
        return np.zeros(0), SolveInfo("empty", 0.0)
    if method == "auto":
        method = "dense" if n < DENSE_LIMIT else "direct"
    if method == "dense":
        Ad = A.toarray() if sps.issparse(A) else np.asarray(A, dtype=float)
        try:
            c = sla.cho_factor(Ad, check_finite=True)
        except np.linalg.LinAlgError as err:
            raise SolverError(f"matrix is not positive definite ({err})") from None
        x = _refine(Ad, lambda r: sla.cho_solve(c, r), b, refine)
        info = SolveInfo("dense", _relres(Ad, x, b))
    elif method == "direct":
        As = sps.csc_matrix(A)
        try:
            lu = spla.factorized(As)
            x = _refine(As, lu, b, refine)
        except RuntimeError as err:
            raise SolverError(f"sparse factorization failed ({err})") from None
        info = SolveInfo("direct", _relres(As, x, b))
    elif method == "cg":
        As = sps.csr_matrix(A)
        d = As.diagonal()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal entry; matrix is not SPD")
        P = spla.LinearOperator(As.shape, matvec=lambda v: v / d)
        count = [0]

        def cb(_):
            count[0] += 1

        x, flag = spla.cg(As, b, rtol=rtol * 1e-2, atol=0.0, M=P, maxiter=maxiter or 20 * n, callback=cb)
        info = SolveInfo("cg", _relres(As, x, b), count[0])
        if flag != 0:
            raise SolverError(f"CG did not converge in {count[0]} iterations, residual {info.residual:.3e}", info.residual)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    if not np.isfinite(info.residual) or info.residual > rtol:
        raise SolverError(f"relative residual {info.residual:.3e} exceeds {rtol:.1e}", info.residual)
    return x, info


def solve_dense(A, b, rcond_min: float = 1e-14):
    """Solve a small dense system, refusing (near-)singular matrices.

    Returns (x, condition number estimate).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise SingularMatrixError("non-finite matrix entries")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or 1.0 / cond < rcond_min:
        raise SingularMatrixError(f"matrix is singular to working precision (cond={cond:.3e})")
    return np.linalg.solve(A, b), float(cond)


def batched_solve(A, b, rcond_min: float = 1e-14):
    """Solve a stack of small systems; raises on any (near-)singular member."""
    A = np.asarray(A, dtype=float)
    if len(A) == 0:
        return np.zeros_like(b)
    cond = np.linalg.cond(A)
    bad = ~np.isfinite(cond) | (1.0 / cond < rcond_min)
    if bad.any():
        err = SingularMatrixError(f"{int(bad.sum())} local system(s) are singular")
        err.indices = np.flatnonzero(bad)
        raise err
    return np.linalg.solve(A, b[..., None])[..., 0]


def smallest_eigenvalue(A, k: int = 1) -> float:
    """Smallest eigenvalue of a symmetric matrix (coercivity witness)."""
    n = A.shape[0]
    if n < 400:
        Ad = A.toarray() if sps.issparse(A) else np.asarray(A)
        return float(np.linalg.eigvalsh(Ad)[0])
    lu = spla.splu(sps.csc_matrix(A))
    op = spla.LinearOperator(A.shape, matvec=lu.solve)
    # largest eigenvalue of A^{-1}
    vals = spla.eigsh(op, k=k, which="LM", return_eigenvectors=False, tol=1e-8)
    return float(1.0 / vals[np.argmax(np.abs(vals))])


def write_matrix_market(path, A) -> None:
    from scipy.io import mmwrite

    mmwrite(str(path), sps.coo_matrix(A))
