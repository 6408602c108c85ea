"""Dense real linear algebra used by every other module.

All routines operate on finite float64 2-D arrays and are pure functions of
their inputs, so values can be shared freely between threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SingularSystemError(ValueError):
    """Linear system is singular to working precision."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a nonempty, finite float64 2-D array (row-major)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(m)


def spectral_norm(w, max_iters: int = 2000, tol: float = 1e-13) -> float:
    """Largest singular value of ``w`` by power iteration on ``w.T @ w``.

    The iteration starts from the normalized all-ones vector, which makes the
    result deterministic; it stops once the relative change of the estimate
    drops below ``tol`` or after ``max_iters`` sweeps. A zero matrix returns
    0.0 (this is documented behaviour, not an error).
    """
    w = as_matrix(w, "w")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    b = w.T @ w
    v = np.ones(b.shape[0]) / np.sqrt(b.shape[0])
    sigma = 0.0
    for _ in range(max_iters):
        bv = b @ v
        nrm = float(np.linalg.norm(bv))
        if nrm == 0.0:
            # v lies in the null space of w.T @ w; with the fixed start vector
            # this only happens for the zero matrix (up to measure zero).
            return 0.0
        v = bv / nrm
        new_sigma = float(np.linalg.norm(w @ v))
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``u @ diag(sigma) @ v.T`` with orthonormal u, v columns."""

    u: np.ndarray       # (n, r)
    sigma: np.ndarray   # (r,), nonnegative, descending
    v: np.ndarray       # (m, r)


def svd(m) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    The largest-magnitude entry of each column of ``u`` is made nonnegative
    (the corresponding ``v`` column is flipped along with it), so repeated
    calls and serialized checkpoints agree bit-for-bit.
    """
    a = as_matrix(m, "m")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    v = vh.T.copy()
    u = u.copy()
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u, sigma=s, v=v)


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` via LU with partial pivoting.

    Raises SingularSystemError when a pivot magnitude falls below 1e-12.
    ``b`` may be a vector or a matrix with matching row count; the result has
    the same shape as ``b``.
    """
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"a must be square, got {a.shape}")
    b_arr = np.asarray(b, dtype=np.float64)
    if b_arr.ndim not in (1, 2) or b_arr.shape[0] != n:
        raise ValueError(f"b must have {n} rows, got shape {b_arr.shape}")
    if not np.all(np.isfinite(b_arr)):
        raise ValueError("b contains non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # pivot check below supersedes LAPACK warnings
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    if float(np.min(np.abs(np.diag(lu)))) < 1e-12:
        raise SingularSystemError("singular system")
    return scipy.linalg.lu_solve((lu, piv), b_arr, check_finite=False)
