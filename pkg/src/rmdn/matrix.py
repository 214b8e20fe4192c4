"""Dense float64 kernels: products, SPD solves and inverse updates.

Matrices are plain 2-D ``numpy`` arrays of dtype float64. Every function
here is pure: inputs are never modified.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InstabilityError, ShapeError, SingularityError

SPD_SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-12
DENOM_TOL = 1e-12


def as_mat(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InstabilityError(f"{name} has non-finite entries")
    return m


def as_vec(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 2 and 1 in v.shape:
        v = v.reshape(-1)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def matmul(a, b) -> np.ndarray:
    """Dense product ``a @ b`` with an explicit shape check."""
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    Raises SingularityError if ``a`` is not symmetric or any pivot
    (``L[j, j] ** 2``) falls to ``PIVOT_TOL`` or below.
    """
    a = as_mat(a, "a")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SPD_SYMMETRY_TOL * scale:
        raise SingularityError("matrix is not symmetric")
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("matrix is not positive definite") from exc
    pivots = np.diag(low) ** 2
    if n and pivots.min() <= PIVOT_TOL:
        raise SingularityError(f"Cholesky pivot {pivots.min():.3e} <= {PIVOT_TOL}")
    return low


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a @ X = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or a matrix; the result has the same shape.
    """
    a = as_mat(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    vector_rhs = b_arr.ndim == 1
    rhs = b_arr.reshape(-1, 1) if vector_rhs else as_mat(b_arr, "b")
    if rhs.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs rows {rhs.shape[0]} != matrix order {a.shape[0]}")
    low = cholesky(a)
    y = solve_triangular(low, rhs, lower=True, check_finite=False)
    x = solve_triangular(low.T, y, lower=False, check_finite=False)
    return x.reshape(-1) if vector_rhs else x


def sm_rank1_inverse_update(p_inv, x) -> np.ndarray:
    """Sherman-Morrison: inverse of ``P + x x^T`` given ``p_inv = P^-1``."""
    p_inv = as_mat(p_inv, "p_inv")
    x = as_vec(x, "x")
    if p_inv.shape != (x.size, x.size):
        raise ShapeError(f"p_inv {p_inv.shape} does not match x of length {x.size}")
    px = p_inv @ x
    denom = 1.0 + x @ px
    if denom <= DENOM_TOL:
        raise InstabilityError(f"rank-1 denominator {denom:.3e} <= {DENOM_TOL}")
    return symmetrize(p_inv - np.outer(px, px) / denom)


def smw_block_inverse_update(p_inv, xb) -> np.ndarray:
    """Woodbury: inverse of ``P + xb^T xb`` given ``p_inv = P^-1``.

    ``xb`` holds one observation per row (B x n). The B x B capacitance
    matrix ``I + xb p_inv xb^T`` is factorised by Cholesky.
    """
    p_inv = as_mat(p_inv, "p_inv")
    xb = as_mat(xb, "xb")
    n = p_inv.shape[0]
    if p_inv.shape != (n, n) or xb.shape[1] != n:
        raise ShapeError(f"p_inv {p_inv.shape} incompatible with batch {xb.shape}")
    pxt = p_inv @ xb.T  # n x B
    cap = symmetrize(np.eye(xb.shape[0]) + xb @ pxt)
    try:
        inner = solve_spd(cap, pxt.T)  # B x n
    except SingularityError as exc:
        raise InstabilityError(f"capacitance matrix is singular: {exc}") from exc
    return symmetrize(p_inv - pxt @ inner)
