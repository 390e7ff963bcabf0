"""Linear algebra contracts: sparse direct solve, dense generalized
symmetric eigensolver and 2-norm condition numbers.

Everything here is sized for desk-scale systems (a few thousand DoFs); the
stabilization eigenproblems stay small because they are restricted to
boundary-supported basis functions before they reach this module.  All
operations are pure functions of their inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverError",
    "solve_linear",
    "generalized_symmetric_eig",
    "condition_number",
    "apply_identity_constraints",
]

_COND_MAX_DIM = 20000


class SolverError(RuntimeError):
    """Linear solver failure (singular or badly inconsistent system)."""


def _as_csr(K) -> sp.csr_matrix:
    if sp.issparse(K):
        return K.tocsr()
    return sp.csr_matrix(np.asarray(K, dtype=float))


def solve_linear(K, F: np.ndarray) -> np.ndarray:
    """Direct sparse solve, nonsymmetric capable.

    Verifies the residual bound ||Kx - F|| <= 1e-10 (||K|| ||x|| + ||F||);
    a singular factorization raises :class:`SolverError` with a rank
    estimate when the system is small enough to afford one.
    """
    A = _as_csr(K)
    b = np.asarray(F, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    x = spla.spsolve(A, b)
    if not np.all(np.isfinite(x)):
        rank = None
        if A.shape[0] <= 4000:
            rank = int(np.linalg.matrix_rank(A.toarray()))
        raise SolverError(f"singular matrix (rank estimate {rank} of {A.shape[0]})")
    normK = spla.norm(A)
    res = np.linalg.norm(A @ x - b)
    bound = 1e-10 * (normK * np.linalg.norm(x) + np.linalg.norm(b))
    if res > max(bound, 1e-300):
        raise SolverError(f"solver residual {res:.3e} exceeds bound {bound:.3e}")
    return x


def generalized_symmetric_eig(A: np.ndarray, B: np.ndarray, shift: float = 0.0):
    """Solve A v = lambda B v for symmetric A, B with B (+ shift I) SPD.

    Returns eigenvalues ascending and B-orthonormal eigenvectors as columns.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    for M, name in ((A, "A"), (B, "B")):
        scale = max(np.abs(M).max(), 1e-300)
        if np.abs(M - M.T).max() > 1e-9 * scale:
            raise ValueError(f"matrix {name} is not symmetric")
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    if shift:
        B = B + shift * np.eye(B.shape[0])
    try:
        w, V = sla.eigh(A, B)
    except sla.LinAlgError as exc:
        raise SolverError(f"generalized eigensolver failed: {exc}") from exc
    return w, V


def condition_number(K) -> float:
    """2-norm condition number via dense singular values."""
    A = _as_csr(K)
    if A.shape[0] > _COND_MAX_DIM:
        raise SolverError(
            f"dimension {A.shape[0]} above dense bound {_COND_MAX_DIM}; "
            "use an iterative estimate instead")
    s = sla.svdvals(A.toarray())
    smin = s[-1]
    if smin == 0.0:
        return np.inf
    return float(s[0] / smin)


def apply_identity_constraints(K, F: np.ndarray, dofs) -> tuple[sp.csr_matrix, np.ndarray]:
    """Zero rows/columns of ``dofs`` and put ones on their diagonal.

    Homogeneous constraints only; used for the rigid-mode fixes where
    conditions are imposed strongly by row/column elimination.
    """
    A = _as_csr(K).tolil()
    b = np.array(F, dtype=float, copy=True)
    dofs = np.asarray(list(dofs), dtype=int)
    if len(dofs):
        A[dofs, :] = 0.0
        A[:, dofs] = 0.0
        A[dofs, dofs] = 1.0
        b[dofs] = 0.0
    return A.tocsr(), b
