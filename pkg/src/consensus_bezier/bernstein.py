"""Bernstein basis and Bezier matrix algebra.

Every matrix here is built from exact integer binomials. The float
constructors convert exact rationals at the very end; the ``*_exact``
variants return ``Fraction`` object arrays for bit-exact work.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np

MAX_DEGREE = 32


def _check_degree(n: int, name: str = "n") -> int:
    if int(n) != n or n < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {n!r}")
    if n > MAX_DEGREE:
        raise ValueError(f"{name}={n} exceeds the supported degree cap {MAX_DEGREE}")
    return int(n)


def _check_order(n: int, k: int) -> int:
    if int(k) != k or k < 0 or k > n:
        raise ValueError(f"order k must satisfy 0 <= k <= n={n}, got {k!r}")
    return int(k)


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter t must lie in [0, 1], got {t}")
    return t


def falling_factorial(n: int, k: int) -> int:
    """n!/(n-k)!, the scale of the k-th Bezier derivative."""
    return factorial(n) // factorial(n - k)


def bernstein_basis(n: int, t: float) -> np.ndarray:
    """Bernstein basis vector b_n(t) of length n+1."""
    n = _check_degree(n)
    t = _check_t(t)
    i = np.arange(n + 1)
    binom = np.array([comb(n, j) for j in i], dtype=float)
    # 0.0**0 == 1.0 keeps the endpoint values exact
    return binom * t**i * (1.0 - t) ** (n - i)


def bernstein_matrix(n: int, ts) -> np.ndarray:
    """Stack of basis vectors, shape (len(ts), n+1)."""
    return np.array([bernstein_basis(n, t) for t in np.atleast_1d(ts)])


@lru_cache(maxsize=None)
def _diff_matrix_int(n: int, k: int) -> tuple:
    rows = []
    for i in range(n - k + 1):
        row = []
        for j in range(n + 1):
            if 0 <= j - i <= k:
                row.append(comb(k, j - i) * (-1) ** (k - j + i))
            else:
                row.append(0)
        rows.append(tuple(row))
    return tuple(rows)


def diff_matrix(n: int, k: int) -> np.ndarray:
    """k-th order forward finite-difference matrix D(n, k), shape (n-k+1, n+1)."""
    n = _check_degree(n)
    k = _check_order(n, k)
    return np.array(_diff_matrix_int(n, k), dtype=float).reshape(n - k + 1, n + 1)


def diff_matrix_exact(n: int, k: int) -> np.ndarray:
    n = _check_degree(n)
    k = _check_order(n, k)
    out = np.empty((n - k + 1, n + 1), dtype=object)
    for i, row in enumerate(_diff_matrix_int(n, k)):
        for j, v in enumerate(row):
            out[i, j] = Fraction(v)
    return out


@lru_cache(maxsize=None)
def _norm_hessian_fractions(n: int, m: int) -> tuple:
    scale = m + n + 1
    return tuple(
        tuple(Fraction(comb(n, i) * comb(m, j), comb(m + n, i + j) * scale) for j in range(m + 1))
        for i in range(n + 1)
    )


def norm_hessian_exact(n: int, m: int | None = None) -> np.ndarray:
    """Bernstein outer-product matrix as exact rationals."""
    n = _check_degree(n)
    m = n if m is None else _check_degree(m, "m")
    out = np.empty((n + 1, m + 1), dtype=object)
    for i, row in enumerate(_norm_hessian_fractions(n, m)):
        for j, v in enumerate(row):
            out[i, j] = v
    return out


def norm_hessian(n: int, m: int | None = None) -> np.ndarray:
    """Integral of b_n(t) b_m(t)^T over [0, 1].

    With ``m`` omitted this is the squared-norm Hessian H(n), for which
    trace(P^T H(n) P) is the integral of |B_P(t)|^2.
    """
    n = _check_degree(n)
    m = n if m is None else _check_degree(m, "m")
    return np.array(
        [[float(v) for v in row] for row in _norm_hessian_fractions(n, m)], dtype=float
    ).reshape(n + 1, m + 1)


def mean_shift(n: int) -> np.ndarray:
    """Projector S(n) = I - 11^T/(n+1) that removes the control-point mean."""
    n = _check_degree(n)
    return np.eye(n + 1) - np.full((n + 1, n + 1), 1.0 / (n + 1))


def mean_shift_exact(n: int) -> np.ndarray:
    n = _check_degree(n)
    out = np.empty((n + 1, n + 1), dtype=object)
    for i in range(n + 1):
        for j in range(n + 1):
            out[i, j] = Fraction(int(i == j)) - Fraction(1, n + 1)
    return out


def as_control_points(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise ValueError(f"control points must be an (n+1) x d matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("control points must be finite")
    _check_degree(P.shape[0] - 1)
    return P


def eval_bezier(P, t: float) -> np.ndarray:
    """Point P^T b_n(t) on the curve."""
    P = as_control_points(P)
    return P.T @ bernstein_basis(P.shape[0] - 1, t)


def sample_bezier(P, ts) -> np.ndarray:
    P = as_control_points(P)
    return bernstein_matrix(P.shape[0] - 1, ts) @ P


def derivative_control(P, k: int) -> tuple[int, np.ndarray]:
    """Scale and control points of the k-th derivative curve.

    The k-th derivative at t equals ``scale * Q.T @ bernstein_basis(n - k, t)``.
    """
    P = as_control_points(P)
    n = P.shape[0] - 1
    k = _check_order(n, k)
    return falling_factorial(n, k), diff_matrix(n, k) @ P


def eval_derivative(P, k: int, t: float) -> np.ndarray:
    scale, Q = derivative_control(P, k)
    return scale * (Q.T @ bernstein_basis(Q.shape[0] - 1, t))


def bezier_inner_product(P, Q) -> float:
    """Integral over [0, 1] of B_P(t) . B_Q(t); degrees may differ."""
    P = as_control_points(P)
    Q = as_control_points(Q)
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"dimension mismatch: {P.shape[1]} vs {Q.shape[1]}")
    H = norm_hessian(P.shape[0] - 1, Q.shape[0] - 1)
    return float(np.trace(P.T @ H @ Q))


def squared_norm(P) -> float:
    P = as_control_points(P)
    return float(np.trace(P.T @ norm_hessian(P.shape[0] - 1) @ P))


def curve_mean(P) -> np.ndarray:
    """Time average of the curve; equals the control-point mean."""
    P = as_control_points(P)
    return P.mean(axis=0)


def curve_variance(P) -> float:
    P = as_control_points(P)
    n = P.shape[0] - 1
    S = mean_shift(n)
    return float(np.trace(P.T @ S @ norm_hessian(n) @ S @ P))


def control_point_variance(P) -> float:
    P = as_control_points(P)
    n = P.shape[0] - 1
    return float(np.trace(P.T @ mean_shift(n) @ P)) / (n + 1)


def de_casteljau(P, t: float) -> np.ndarray:
    """Recursive evaluation; used as an independent check of eval_bezier."""
    pts = as_control_points(P).copy()
    t = _check_t(t)
    while pts.shape[0] > 1:
        pts = (1.0 - t) * pts[:-1] + t * pts[1:]
    return pts[0]
