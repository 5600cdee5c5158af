"""Pearson information matrix ``G^T Sigma^{-1} G`` and related bounds.

Every function here takes a :class:`~pimtool.moments.MomentSummary`; none of
them needs the data density.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pimtool.errors import (
    DimensionMismatch,
    InsufficientStatistics,
    NonPositiveSchur,
    NotPositiveDefinite,
    PimError,
    RankDeficientCombiner,
    SingularSigma,
)
from pimtool.infomatrix import InfoMatrix
from pimtool.linalg import loewner_leq, solve_spd, sym
from pimtool.models import ModelSpec
from pimtool.moments import DEFAULT_FD_STEP, MomentSummary, compute_moments
from pimtool.statistics import StatisticSet

__all__ = [
    "LadderReport",
    "LadderRung",
    "combiner_bound",
    "extension_terms",
    "ladder",
    "optimal_combiner",
    "pim",
    "pim_extend",
    "pim_stderr",
]

MAX_COMBINER_COND = 1e12


def _sigma_solve(summary: MomentSummary, rhs: NDArray, ridge: float) -> tuple[NDArray, bool]:
    try:
        return solve_spd(summary.sigma, rhs), False
    except NotPositiveDefinite as exc:
        if ridge <= 0:
            raise SingularSigma(f"statistic covariance is singular or indefinite: {exc}") from None
    m = summary.m
    bumped = summary.sigma + ridge * np.trace(summary.sigma) / m * np.eye(m)
    try:
        return solve_spd(bumped, rhs), True
    except NotPositiveDefinite as exc:
        raise SingularSigma(f"statistic covariance singular even after ridge: {exc}") from None


def pim(summary: MomentSummary, ridge: float = 0.0, *, allow_underidentified: bool = False) -> InfoMatrix:
    """Pearson information ``G^T Sigma^{-1} G`` via a Cholesky solve.

    With fewer statistics than parameters the bound is still valid but
    rank deficient; that case raises unless ``allow_underidentified``.

    A positive ``ridge`` is tried only after the plain solve fails; the
    covariance is then inflated by ``ridge * trace(Sigma) / M`` on the
    diagonal and the result is flagged ``ridged``. A ridged matrix is not a
    guaranteed lower bound on the Fisher information.
    """
    if summary.m < summary.n and not allow_underidentified:
        raise InsufficientStatistics(
            f"need M >= n statistics, got M={summary.m} for n={summary.n} parameters"
        )
    x, ridged = _sigma_solve(summary, summary.g, ridge)
    method = summary.method + (";ridged" if ridged else "")
    se = None if ridged else pim_stderr(summary, x)
    return InfoMatrix(sym(summary.g.T @ x), kind="pim", method=method, theta=summary.theta, stderr=se)


def pim_stderr(summary: MomentSummary, x: NDArray | None = None) -> NDArray[np.float64] | None:
    """First-order standard errors of the Pearson information from those of ``g`` and ``sigma``.

    Entry errors are propagated through ``dB = dG^T X + X^T dG - X^T dSigma X``
    with ``X = Sigma^{-1} G``, treating entries as uncorrelated. Returns None
    for summaries without Monte Carlo errors.
    """
    if summary.mc_stderr_g is None or summary.mc_stderr_sigma is None:
        return None
    if x is None:
        x = solve_spd(summary.sigma, summary.g)
    n = summary.n
    eye = np.eye(n)
    # d B_ab / d G_ij = [j == a] X_ib + [j == b] X_ia
    d_g = np.einsum("ja,ib->abij", eye, x) + np.einsum("jb,ia->abij", eye, x)
    # a symmetric perturbation of Sigma_ij moves both (i, j) and (j, i)
    d_s = -np.einsum("ia,jb->abij", x, x)
    d_s = d_s + np.swapaxes(d_s, 2, 3)
    d_s = d_s * np.where(np.eye(summary.m, dtype=bool), 0.5, 1.0)
    upper = np.triu(np.ones((summary.m, summary.m)))
    var = np.einsum("abij,ij->ab", d_g**2, summary.mc_stderr_g**2)
    var += np.einsum("abij,ij->ab", d_s**2, upper * summary.mc_stderr_sigma**2)
    return np.sqrt(var)


def optimal_combiner(summary: MomentSummary) -> NDArray[np.float64]:
    """``Sigma^{-1} G``, the combiner that attains the Pearson information."""
    return solve_spd(summary.sigma, summary.g)


def combiner_bound(summary: MomentSummary, w: ArrayLike) -> InfoMatrix:
    """Lower bound ``G^T W (W^T Sigma W)^{-1} W^T G`` for a combiner ``W`` (M x n)."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if w.shape[0] != summary.m:
        raise DimensionMismatch(f"combiner has {w.shape[0]} rows, expected M={summary.m}")
    inner = sym(w.T @ summary.sigma @ w)
    eig = np.linalg.eigvalsh(inner)
    if eig[0] <= 0 or eig[-1] / eig[0] > MAX_COMBINER_COND:
        raise RankDeficientCombiner(
            f"W^T Sigma W is singular or ill-conditioned (eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})"
        )
    wk = w.T @ summary.g
    try:
        b = wk.T @ solve_spd(inner, wk)
    except NotPositiveDefinite as exc:
        raise RankDeficientCombiner(str(exc)) from None
    return InfoMatrix(sym(b), kind="combiner-bound", method=summary.method, theta=summary.theta)


def extension_terms(summary: MomentSummary, m: int) -> tuple[NDArray, float, NDArray]:
    """``(c, kappa, d)`` describing statistic ``m`` (0-based) relative to the first ``m``."""
    return summary.sigma[:m, m].copy(), float(summary.sigma[m, m]), summary.g[m].copy()


def pim_extend(
    b_m: InfoMatrix, summary_m: MomentSummary, c: ArrayLike, kappa: float, d: ArrayLike
) -> InfoMatrix:
    """Rank-one update of the Pearson information when one statistic is appended.

    ``c`` is the covariance of the new statistic with the existing ones,
    ``kappa`` its variance, ``d`` the gradient of its mean.
    """
    c = np.asarray(c, dtype=np.float64).reshape(summary_m.m)
    d = np.asarray(d, dtype=np.float64).reshape(summary_m.n)
    x = solve_spd(summary_m.sigma, c)
    quad = float(c @ x)
    schur = float(kappa) - quad
    if schur <= 64 * np.finfo(float).eps * max(abs(float(kappa)), abs(quad), 1e-300):
        raise NonPositiveSchur(f"kappa - c^T Sigma^-1 c = {schur:.3e} is not positive")
    u = d - summary_m.g.T @ x
    return InfoMatrix(
        b_m.matrix + np.outer(u, u) / schur,
        kind="pim",
        method=b_m.method + ";rank-one-extension",
        theta=b_m.theta,
    )


@dataclass(frozen=True, eq=False)
class LadderRung:
    m: int
    info: InfoMatrix | None
    diff_min_eigenvalue: float | None  # lambda_min(B_m - B_{m-1}); None on the first rung
    extend_residual: float | None  # ||extend - recompute||_F / max(1, ||recompute||_F)
    error: str | None = None


@dataclass(frozen=True, eq=False)
class LadderReport:
    rungs: list[LadderRung]
    tolerance: float
    fim: InfoMatrix | None = None
    method: str = ""
    steps_ok: list[bool] = field(default_factory=list)
    below_fim: list[bool] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return all(self.steps_ok)

    @property
    def chain_holds(self) -> bool:
        """Monotone and every rung below the Fisher information (if given)."""
        return self.monotone and all(self.below_fim)


def _check_nested(sets: Sequence[StatisticSet]) -> None:
    for small, big in zip(sets, sets[1:]):
        if len(big) != len(small) + 1 or tuple(big.descriptors[: len(small)]) != small.descriptors:
            raise ValueError("ladder sets must be nested, each extending the previous by one statistic")


def ladder(
    model: ModelSpec,
    sets: Sequence[StatisticSet],
    method: str = "analytic",
    *,
    k: int = 10**6,
    seed: int = 0,
    fd_step: float = DEFAULT_FD_STEP,
    tol: float = 1e-10,
    fim: InfoMatrix | None = None,
    jobs: int = 1,
) -> LadderReport:
    """Pearson information on each rung of a nested statistic ladder.

    Moments are computed once for the largest set and restricted to each
    prefix, so Monte Carlo rungs share their draws. Each rung is also rebuilt
    from the previous one by :func:`pim_extend` as a consistency check.
    """
    if not sets:
        raise ValueError("ladder needs at least one statistic set")
    _check_nested(sets)
    full = compute_moments(model, sets[-1], method, k=k, seed=seed, fd_step=fd_step, jobs=jobs)
    rungs: list[LadderRung] = []
    steps_ok: list[bool] = []
    prev: InfoMatrix | None = None
    prev_summary: MomentSummary | None = None
    for sset in sets:
        m = len(sset)
        summary = full.head(m)
        try:
            info = pim(summary, allow_underidentified=True)
        except PimError as exc:
            rungs.append(LadderRung(m, None, None, None, f"{type(exc).__name__}: {exc}"))
            prev = prev_summary = None
            continue
        diff = resid = None
        if prev is not None:
            rep = loewner_leq(prev.matrix, info.matrix, tol)
            diff = rep.min_eigenvalue_of_difference
            steps_ok.append(rep.holds)
            try:
                ext = pim_extend(prev, prev_summary, *extension_terms(full, m - 1))
                resid = float(
                    np.linalg.norm(ext.matrix - info.matrix) / max(1.0, np.linalg.norm(info.matrix))
                )
            except PimError:
                resid = float("inf")
        rungs.append(LadderRung(m, info, diff, resid))
        prev, prev_summary = info, summary
    below = []
    if fim is not None:
        below = [loewner_leq(r.info.matrix, fim.matrix, tol).holds for r in rungs if r.info is not None]
    return LadderReport(rungs, tol, fim, full.method, steps_ok, below)
