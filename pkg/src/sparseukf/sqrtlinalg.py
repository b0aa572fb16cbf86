"""Dense kernels for square-root covariance propagation.

Everything here works on plain numpy arrays and uses a single convention:
square-root factors are lower triangular, ``P = L @ L.T``, with non-negative
diagonals. The QR path transposes its result into that convention.
"""

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "NotPositiveDefinite",
    "RankDeficient",
    "DowndateFailure",
    "SingularFactor",
    "cholesky",
    "qr_triangularize",
    "chol_rank1_update",
    "triangular_solve",
]

# Pivot / symmetry tolerances sized for covariances down to the 1e-6 scale.
PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10
RANK_TOL = 1e-12
SOLVE_DIAG_TOL = 1e-14


class NotPositiveDefinite(ValueError):
    """Input matrix is not symmetric positive definite."""


class RankDeficient(ValueError):
    """Matrix columns are linearly dependent beyond tolerance."""


class DowndateFailure(ArithmeticError):
    """Rank-1 downdate would leave the matrix indefinite."""


class SingularFactor(ValueError):
    """Triangular factor has a (near-)zero diagonal entry."""


def _as_square(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def cholesky(p):
    """Lower-triangular Cholesky factor L of a symmetric positive-definite P.

    Raises NotPositiveDefinite if P is asymmetric beyond tolerance or any
    pivot falls below PIVOT_TOL.
    """
    p = _as_square(p, "p")
    scale = max(1.0, float(np.abs(p).max())) if p.size else 1.0
    if not np.isfinite(p).all():
        raise NotPositiveDefinite("matrix contains non-finite entries")
    if np.abs(p - p.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric within tolerance")

    n = p.shape[0]
    lower = np.zeros_like(p)
    for j in range(n):
        pivot = p[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot < PIVOT_TOL:
            raise NotPositiveDefinite(f"non-positive pivot {pivot:.3e} at index {j}")
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (p[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def qr_triangularize(a):
    """Triangular factor of the thin QR of ``a`` (rows >= cols).

    Returns a lower-triangular L with ``L @ L.T == a.T @ a`` and a
    non-negative diagonal. Raises RankDeficient when the columns of ``a``
    are linearly dependent beyond tolerance.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {a.shape}")
    rows, cols = a.shape
    if rows < cols:
        raise ValueError(f"need rows >= cols, got {rows}x{cols}")

    r = np.linalg.qr(a, mode="r")
    diag = np.diagonal(r)
    largest = np.abs(diag).max(initial=0.0)
    if largest == 0.0 or np.abs(diag).min() <= RANK_TOL * largest:
        raise RankDeficient("columns are linearly dependent beyond tolerance")

    lower = r.T.copy()
    flip = np.where(np.diagonal(lower) < 0.0, -1.0, 1.0)
    lower *= flip[np.newaxis, :]
    return lower


def chol_rank1_update(s, v, weight):
    """Factor of ``S @ S.T + weight * outer(v, v)`` from the factor S.

    ``weight`` is signed: positive performs an update, negative a downdate
    with magnitude ``|weight|``. Raises DowndateFailure when the downdated
    matrix would not be positive semi-definite.
    """
    s = _as_square(s, "s")
    v = np.asarray(v, dtype=float)
    n = s.shape[0]
    if v.shape != (n,):
        raise ValueError(f"v must have shape ({n},), got {v.shape}")
    if not np.isfinite(weight):
        raise ValueError("weight must be finite")

    lower = s.copy()
    if weight == 0.0 or not v.any():
        return lower

    sign = 1.0 if weight > 0.0 else -1.0
    u = np.sqrt(abs(weight)) * v
    for k in range(n):
        lkk = lower[k, k]
        if lkk <= 0.0:
            raise DowndateFailure(f"factor diagonal {lkk:.3e} at index {k} is not positive")
        r2 = lkk * lkk + sign * u[k] * u[k]
        if r2 <= 0.0:
            raise DowndateFailure("downdate leaves the matrix indefinite")
        r = np.sqrt(r2)
        c = r / lkk
        w = u[k] / lkk
        lower[k, k] = r
        if k + 1 < n:
            lower[k + 1 :, k] = (lower[k + 1 :, k] + sign * w * u[k + 1 :]) / c
            u[k + 1 :] = c * u[k + 1 :] - w * lower[k + 1 :, k]
    if not np.isfinite(lower).all():
        raise DowndateFailure("rank-1 modification produced non-finite entries")
    return lower


def triangular_solve(s, b, side="left", transpose=False):
    """Solve a triangular system against the lower-triangular factor ``s``.

    side="left" solves ``op(S) @ X = B``; side="right" solves
    ``X @ op(S) = B``, where ``op`` is the transpose when requested.
    """
    s = _as_square(s, "s")
    if np.abs(np.diagonal(s)).min(initial=np.inf) <= SOLVE_DIAG_TOL:
        raise SingularFactor("factor has a zero diagonal entry")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    b = np.asarray(b, dtype=float)
    if side == "left":
        return solve_triangular(s, b, lower=True, trans="T" if transpose else "N")
    # X @ op(S) = B  <=>  op(S).T @ X.T = B.T
    rhs = b.T if b.ndim == 2 else b
    x = solve_triangular(s, rhs, lower=True, trans="N" if transpose else "T")
    return x.T if b.ndim == 2 else x
