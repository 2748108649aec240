"""Matrix numerics used throughout the pipeline.

Matrices are plain 2-D ``numpy`` arrays (complex128 or float64). Everything
here is a pure function of its inputs.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np


class SvdError(ArithmeticError):
    """Raised when the SVD fails to converge on a pathological input."""


class DegenerateFitError(ValueError):
    """Raised when a line fit has no unique solution."""


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def svd(a: np.ndarray, full_matrices: bool = True) -> SvdResult:
    """Singular value decomposition ``a = u @ diag(s) @ v.conj().T``.

    Backed by LAPACK's divide-and-conquer driver. Singular values come back
    non-negative and in descending order. Note that ``v`` holds the right
    singular vectors as columns (not ``V^H``).

    Raises:
        ValueError: if ``a`` is not 2-D or holds non-finite entries.
        SvdError: if LAPACK reports non-convergence.
    """
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got array with ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=full_matrices)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge for {a.shape} input") from exc
    return SvdResult(u, s, vh.conj().T)


def singular_values(a: np.ndarray) -> np.ndarray:
    """Descending singular values of ``a`` without forming the vectors."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got array with ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge for {a.shape} input") from exc


def exchange_matrix(p: int) -> np.ndarray:
    """The ``p x p`` exchange matrix (ones on the anti-diagonal)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return np.eye(p)[::-1].copy()


def left_pi_real_matrix(p: int) -> np.ndarray:
    """Sparse unitary left-Pi-real matrix ``Q_p``, i.e. ``Pi_p @ Q_p.conj() == Q_p``.

    For even ``p = 2n``::

        Q = 1/sqrt(2) * [[I_n,   j I_n],
                         [Pi_n, -j Pi_n]]

    For odd ``p = 2n + 1`` a middle row and column are inserted holding a
    single one at the centre.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    n, odd = divmod(p, 2)
    eye = np.eye(n)
    pi = exchange_matrix(n) if n else np.zeros((0, 0))
    q = np.zeros((p, p), dtype=complex)
    q[:n, :n] = eye
    q[:n, p - n:] = 1j * eye
    q[p - n:, :n] = pi
    q[p - n:, p - n:] = -1j * pi
    q /= np.sqrt(2.0)
    if odd:
        q[n, n] = 1.0
    return q


def fit_line_least_squares(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Ordinary least-squares line through ``(xs, ys)``; returns ``(slope, intercept)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D sequences of equal length")
    if x.size < 2:
        raise DegenerateFitError("need at least two points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateFitError("all xs are equal")
    slope = float(dx @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())
