"""Weight orthogonalization machinery.

Rectangular convention throughout: a tall matrix (rows > cols) is orthogonal
when its columns are orthonormal (W.T @ W = I), a wide one when its rows are
(W @ W.T = I). Wide inputs are handled by transposing, operating, and
transposing back. Biases never participate; only weight matrices carry the
constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, solve_linear, spectral_norm, svd

_SQRT3 = math.sqrt(3.0)


class BjorckConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the final deviation."""

    def __init__(self, deviation: float, max_iters: int):
        super().__init__(
            f"Bjorck iteration did not converge within {max_iters} steps "
            f"(final deviation {deviation:.3e})"
        )
        self.deviation = deviation


class DegenerateMatrixError(ValueError):
    """Rank-deficient input where a unique polar factor is required."""


def orientation(w: np.ndarray) -> str:
    """'tall', 'wide' or 'square', derived solely from the dimensions."""
    r, c = w.shape
    if r > c:
        return "tall"
    if r < c:
        return "wide"
    return "square"


def gram_deviation(w) -> float:
    """Spectral-norm distance of the Gram matrix from the identity.

    ||I - W.T W||_2 for tall/square inputs, ||I - W W.T||_2 for wide ones;
    zero exactly when W is orthogonal in the rectangular sense.
    """
    w = as_matrix(w, "w")
    if orientation(w) == "wide":
        g = w @ w.T
    else:
        g = w.T @ w
    return spectral_norm(np.eye(g.shape[0]) - g)


# Coefficients of the truncated (W^T W)^{-1/2} series in Q = I - W^T W:
# order-p step multiplies W by I + sum_{i<=p} (-1)^i binom(-1/2, i) Q^i.
_BJORCK_COEFFS = {1: (0.5,), 2: (0.5, 0.375)}


def bjorck_step(w, p: int = 1) -> np.ndarray:
    """One Bjorck orthogonalization step of order ``p``.

    For p = 1 this is W (I + Q/2). On diagonal input each singular value maps
    as sigma -> sigma (3 - sigma^2) / 2, a fixed-point iteration that
    converges to 1 on (0, sqrt(3)) and diverges outside.
    """
    w = as_matrix(w, "w")
    if p not in _BJORCK_COEFFS:
        raise ValueError(f"p must be in {{1, 2}}, got {p}")
    if orientation(w) == "wide":
        return np.ascontiguousarray(bjorck_step(w.T, p).T)
    q = np.eye(w.shape[1]) - w.T @ w
    acc = np.eye(w.shape[1])
    q_pow = None
    for coeff in _BJORCK_COEFFS[p]:
        q_pow = q if q_pow is None else q_pow @ q
        acc = acc + coeff * q_pow
    return w @ acc


def bjorck_blend(w, beta: float) -> np.ndarray:
    """Relaxed first-order step W (I + beta (I - W.T W)), orientation-aware.

    beta = 1/2 recovers bjorck_step(w, 1); smaller beta interpolates toward
    the identity update, which is how the blended training scheme anneals the
    projection away.
    """
    w = as_matrix(w, "w")
    if orientation(w) == "wide":
        return np.ascontiguousarray(bjorck_blend(w.T, beta).T)
    q = np.eye(w.shape[1]) - w.T @ w
    return w @ (np.eye(w.shape[1]) + beta * q)


def bjorck_orthogonalize(w, tol: float = 1e-8, max_iters: int = 100) -> np.ndarray:
    """Iterate first-order Bjorck steps until gram_deviation < tol.

    The p=1 map diverges for spectra at or above sqrt(3), so inputs with
    spectral norm >= sqrt(3) - 0.05 are pre-scaled by 1/||W||_2 first; the
    limit (the polar factor) is unchanged by positive scaling.
    """
    w = as_matrix(w, "w")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    s = spectral_norm(w)
    if s >= _SQRT3 - 0.05:
        w = w / s
    for _ in range(max_iters):
        if gram_deviation(w) < tol:
            return w
        w = bjorck_step(w, 1)
    dev = gram_deviation(w)
    if dev < tol:
        return w
    raise BjorckConvergenceError(dev, max_iters)


def ortho_penalty(w, lam: float) -> tuple[float, np.ndarray]:
    """Soft orthogonality penalty lam ||W.T W - I||_F^2 and its gradient.

    The gradient is the closed form 4 lam W (W.T W - I); for wide matrices
    both are evaluated on the transposed problem.
    """
    w = as_matrix(w, "w")
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    if orientation(w) == "wide":
        value, grad = ortho_penalty(w.T, lam)
        return value, np.ascontiguousarray(grad.T)
    g = w.T @ w - np.eye(w.shape[1])
    value = lam * float((g * g).sum())
    grad = 4.0 * lam * (w @ g)
    return value, grad


def cayley_update(w, grad, tau: float) -> np.ndarray:
    """Move W along the Stiefel manifold against ``grad`` with step ``tau``.

    Builds the skew-symmetric A = grad W.T - W grad.T and applies the
    rotation (I + tau/2 A)^{-1} (I - tau/2 A) to W. For orthonormal W the
    result is orthonormal again up to roundoff, because the rotation is
    exactly orthogonal for skew A. ``grad`` points in the direction of
    increase of the quantity being minimized.
    """
    w = as_matrix(w, "w")
    grad = as_matrix(grad, "grad")
    if grad.shape != w.shape:
        raise ValueError(f"grad shape {grad.shape} != w shape {w.shape}")
    if orientation(w) == "wide":
        raise ValueError("cayley_update requires a square or tall matrix")
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    m = grad @ w.T
    a = m - m.T  # skew-symmetric by construction, exactly
    n = a.shape[0]
    eye = np.eye(n)
    half = 0.5 * tau
    # I + (tau/2) A has eigenvalues 1 + i*(tau/2)*lambda for real skew A, so it
    # is never singular for real tau; solve_linear raising would be a bug.
    return solve_linear(eye + half * a, (eye - half * a) @ w)


def svd_reinit(m, lam: float) -> np.ndarray:
    """Replace all singular values of ``m`` by ``lam``: returns lam * U V.T."""
    m = as_matrix(m, "m")
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    r = svd(m)
    if float(r.sigma.min()) < 1e-12:
        raise DegenerateMatrixError("degenerate init matrix")
    return lam * (r.u @ r.v.T)


@dataclass(frozen=True)
class ConvTensor:
    """4-D convolution weights (filter height n, width m, in l, out k),
    stored flat in row-major (n, m, l, k) index order."""

    n: int
    m: int
    l: int
    k: int
    data: np.ndarray

    def __post_init__(self):
        for name in ("n", "m", "l", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.data.ndim != 1 or self.data.shape[0] != self.n * self.m * self.l * self.k:
            raise ValueError(
                f"data length {self.data.shape} != n*m*l*k = {self.n * self.m * self.l * self.k}"
            )


def reshape_conv(t: ConvTensor) -> np.ndarray:
    """Flatten each output kernel to a column: (n*m*l) x k matrix.

    Column j is kernel j in row-major (n, m, l) order, so orthogonality of
    the matrix columns is orthogonality of the kernels.
    """
    return t.data.reshape(t.n * t.m * t.l, t.k).copy()


def unreshape_conv(w, dims: tuple[int, int, int, int]) -> ConvTensor:
    """Exact inverse of reshape_conv for the given (n, m, l, k)."""
    w = as_matrix(w, "w")
    n, m, l, k = dims
    if w.shape != (n * m * l, k):
        raise ValueError(f"matrix shape {w.shape} incompatible with dims {dims}")
    return ConvTensor(n, m, l, k, w.reshape(-1).copy())
