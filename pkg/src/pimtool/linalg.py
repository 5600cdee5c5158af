"""Symmetric-matrix kernels: SPD solves, Loewner comparison, text format.

Symmetric matrices are plain ``float64`` ndarrays passed through
:func:`sym`, which symmetrizes as ``(A + A.T) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray

from pimtool.errors import DimensionMismatch, NotPositiveDefinite

__all__ = [
    "LoewnerReport",
    "format_matrix",
    "loewner_leq",
    "min_eigenvalue",
    "parse_matrix",
    "solve_spd",
    "sym",
]

_EPS = np.finfo(np.float64).eps


def sym(a: ArrayLike) -> NDArray[np.float64]:
    """Return ``(A + A.T) / 2`` as a fresh float array; ``A`` must be square."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def cholesky(a: ArrayLike) -> NDArray[np.float64]:
    """Lower Cholesky factor of a symmetric matrix.

    Raises
    ------
    NotPositiveDefinite
        If the factorization breaks down or any pivot ``L[i, i]**2`` is at or
        below ``eps * trace(A) / dim``.
    """
    a = sym(a)
    dim = a.shape[0]
    threshold = _EPS * abs(np.trace(a)) / dim
    try:
        low = sla.cholesky(a, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}") from None
    pivots = np.diag(low) ** 2
    if np.trace(a) <= 0 or np.min(pivots) <= threshold:
        raise NotPositiveDefinite(
            f"Cholesky pivot {np.min(pivots):.3e} <= threshold {threshold:.3e}"
        )
    return low


def solve_spd(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Solve ``A X = B`` for symmetric positive-definite ``A``.

    ``B`` may be a vector or a ``dim x k`` matrix; the result has the same shape.
    """
    a = sym(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"A is {a.shape}, B has {b.shape[0]} rows")
    low = cholesky(a)
    return sla.cho_solve((low, True), b)


def min_eigenvalue(a: ArrayLike) -> float:
    """Smallest eigenvalue via the symmetric eigensolver."""
    return float(np.linalg.eigvalsh(sym(a))[0])


@dataclass(frozen=True)
class LoewnerReport:
    holds: bool
    min_eigenvalue_of_difference: float
    tolerance_used: float

    def __bool__(self) -> bool:
        return self.holds


def loewner_leq(
    a: ArrayLike, b: ArrayLike, rel_tol: float = 1e-10, *, abs_tol: float = 0.0
) -> LoewnerReport:
    """Check ``A <= B`` in the Loewner order.

    The tolerance is ``rel_tol * max(1, ||A||_F, ||B||_F)`` plus ``abs_tol``
    (for Monte Carlo error budgets); the relation holds when
    ``lambda_min(B - A) >= -tolerance``.
    """
    a, b = sym(a), sym(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare {a.shape} with {b.shape}")
    if rel_tol < 0 or abs_tol < 0:
        raise ValueError("tolerances must be non-negative")
    tol = rel_tol * max(1.0, np.linalg.norm(a), np.linalg.norm(b)) + abs_tol
    lam = min_eigenvalue(b - a)
    return LoewnerReport(holds=bool(lam >= -tol), min_eigenvalue_of_difference=lam, tolerance_used=tol)


def format_matrix(a: ArrayLike) -> str:
    """Serialize as ``dim=<d>`` followed by ``d`` rows of 17-significant-digit reals."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    lines = [f"dim={a.shape[0]}"]
    lines += [" ".join(format(float(x), ".17g") for x in row) for row in a]
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> NDArray[np.float64]:
    """Inverse of :func:`format_matrix`. Lines starting with ``#`` are skipped."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("dim="):
        raise ValueError("matrix text must start with 'dim=<d>'")
    dim = int(lines[0][4:])
    rows = [[float(tok) for tok in ln.split()] for ln in lines[1 : dim + 1]]
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ValueError(f"expected {dim} rows of {dim} values")
    return np.array(rows, dtype=np.float64)
