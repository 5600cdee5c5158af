"""Mean, covariance and mean-gradient of ``s(y)`` at ``theta``.

The analytic path uses closed-form raw moments of one observation; the
Monte Carlo path draws ``k`` data vectors from counter-based substreams and
differentiates the sample mean with common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from pimtool.errors import CapabilityMissing, DimensionMismatch, DomainError, UnsupportedAnalytic
from pimtool.linalg import sym
from pimtool.models import Capability, ModelSpec, sample_at, score
from pimtool.statistics import StatisticSet, eval_stats
from pimtool.streams import draw_uniforms

__all__ = [
    "IdentityCheck",
    "MomentSummary",
    "analytic_moments",
    "compute_moments",
    "mc_moments",
    "scale_to_n_obs",
    "score_moment_identity_check",
]

DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class MomentSummary:
    """``mu`` (M,), ``sigma`` (M, M) and ``g = d mu / d theta`` (M, n).

    Monte Carlo summaries also carry entrywise standard errors of all three.
    """

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    g: NDArray[np.float64]
    method: str
    theta: tuple[float, ...]
    labels: tuple[str, ...] = ()
    mc_stderr_mu: NDArray[np.float64] | None = None
    mc_stderr_sigma: NDArray[np.float64] | None = None
    mc_stderr_g: NDArray[np.float64] | None = None
    mc_samples: int | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        g = np.atleast_2d(np.asarray(self.g, dtype=np.float64))
        sigma = sym(self.sigma)
        if sigma.shape[0] != mu.size or g.shape[0] != mu.size:
            raise DimensionMismatch(
                f"mu has {mu.size} entries, sigma is {sigma.shape}, g is {g.shape}"
            )
        if g.shape[1] != len(self.theta):
            raise DimensionMismatch(f"g has {g.shape[1]} columns for {len(self.theta)} parameters")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "sigma", sigma)

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def n(self) -> int:
        return self.g.shape[1]

    def head(self, m: int) -> MomentSummary:
        """Summary of the first ``m`` statistics."""
        def cut(a, two=False):
            if a is None:
                return None
            return a[:m, :m] if two else a[:m]
        return replace(
            self,
            mu=self.mu[:m],
            sigma=self.sigma[:m, :m],
            g=self.g[:m],
            labels=self.labels[:m],
            mc_stderr_mu=cut(self.mc_stderr_mu),
            mc_stderr_sigma=cut(self.mc_stderr_sigma, two=True),
            mc_stderr_g=cut(self.mc_stderr_g),
        )


def _check_analytic(model: ModelSpec, sset: StatisticSet) -> None:
    if not model.has(Capability.ANALYTIC_MOMENTS):
        raise UnsupportedAnalytic(f"{model.family} has no closed-form moments")
    if not sset.is_monomial:
        raise UnsupportedAnalytic("closed-form moments exist only for monomial statistics")
    top = model.impl.max_analytic_degree
    if max(sset.degrees) > top:
        raise UnsupportedAnalytic(
            f"{model.family}: closed-form moments up to degree {top}, asked for {max(sset.degrees)}"
        )


def analytic_moments(model: ModelSpec, sset: StatisticSet) -> MomentSummary:
    """Exact moments of averaged monomials; ``sigma = sigma_1 / N``."""
    _check_analytic(model, sset)
    theta = np.asarray(model.theta)
    degs = sset.degrees
    raw = {}
    for d in {a + b for a in degs for b in degs} | set(degs):
        raw[d] = model.impl.raw_moment(model, theta, d)
    mu = np.array([raw[d][0] for d in degs])
    g = np.array([raw[d][1] for d in degs])
    sigma1 = np.array([[raw[a + b][0] - raw[a][0] * raw[b][0] for b in degs] for a in degs])
    return MomentSummary(
        mu=mu,
        sigma=sigma1 / model.n_obs,
        g=g,
        method="analytic",
        theta=model.theta,
        labels=tuple(sset.labels),
    )


def _shifted(model: ModelSpec, j: int, h: float, sign: int) -> NDArray:
    theta = np.array(model.theta)
    theta[j] += sign * h
    if not model.in_domain(theta):
        raise DomainError(f"finite-difference point {theta} leaves the parameter domain")
    return theta


def mc_moments(
    model: ModelSpec,
    sset: StatisticSet,
    k: int,
    seed: int,
    fd_step: float = DEFAULT_FD_STEP,
    *,
    stream: int = 0,
    jobs: int = 1,
) -> MomentSummary:
    """Monte Carlo moments from ``k`` draws.

    ``sigma`` is the unbiased sample covariance. Column ``j`` of ``g`` is a
    central difference of the sample mean at ``theta +/- h e_j`` with
    ``h = fd_step * max(1, |theta_j|)``, reusing the same uniforms on both
    sides. No regularization is applied.
    """
    if k < 2:
        raise ValueError("mc_moments needs k >= 2")
    u = draw_uniforms(seed, 0, k, model.n_obs, stream=stream, jobs=jobs)
    s = eval_stats(sset, sample_at(model, model.theta, u))
    mu = s.mean(axis=0)
    z = s - mu
    sigma = sym(z.T @ z / (k - 1))
    m = len(sset)
    se_mu = s.std(axis=0, ddof=1) / np.sqrt(k)
    se_sigma = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            se_sigma[a, b] = se_sigma[b, a] = np.std(z[:, a] * z[:, b], ddof=1) / np.sqrt(k)

    g = np.empty((m, model.n))
    se_g = np.empty((m, model.n))
    for j in range(model.n):
        h = fd_step * max(1.0, abs(model.theta[j]))
        sp = eval_stats(sset, sample_at(model, _shifted(model, j, h, +1), u))
        sm = eval_stats(sset, sample_at(model, _shifted(model, j, h, -1), u))
        diff = (sp - sm) / (2 * h)
        g[:, j] = diff.mean(axis=0)
        se_g[:, j] = diff.std(axis=0, ddof=1) / np.sqrt(k)

    return MomentSummary(
        mu=mu,
        sigma=sigma,
        g=g,
        method="monte-carlo",
        theta=model.theta,
        labels=tuple(sset.labels),
        mc_stderr_mu=se_mu,
        mc_stderr_sigma=se_sigma,
        mc_stderr_g=se_g,
        mc_samples=k,
        seed=seed,
    )


def compute_moments(
    model: ModelSpec,
    sset: StatisticSet,
    method: str = "auto",
    *,
    k: int = 10**6,
    seed: int = 0,
    fd_step: float = DEFAULT_FD_STEP,
    jobs: int = 1,
) -> MomentSummary:
    """Dispatch on ``method`` in {"analytic", "mc", "auto"}; auto prefers closed form."""
    if method == "analytic":
        return analytic_moments(model, sset)
    if method == "mc":
        return mc_moments(model, sset, k, seed, fd_step, jobs=jobs)
    if method == "auto":
        try:
            return analytic_moments(model, sset)
        except UnsupportedAnalytic:
            return mc_moments(model, sset, k, seed, fd_step, jobs=jobs)
    raise ValueError(f"unknown moment method {method!r}")


def scale_to_n_obs(summary: MomentSummary, n_from: int, n_to: int, sset: StatisticSet) -> MomentSummary:
    """Rescale a summary of averaged monomials from ``n_from`` to ``n_to`` observations.

    Under i.i.d. sampling the mean and its gradient do not depend on N and the
    covariance scales as 1/N.
    """
    if not sset.is_monomial:
        raise ValueError("N-rescaling is only valid for averaged monomial statistics")
    f = n_from / n_to
    return replace(
        summary,
        sigma=summary.sigma * f,
        mc_stderr_sigma=None if summary.mc_stderr_sigma is None else summary.mc_stderr_sigma * f,
        method=f"{summary.method};rescaled-N{n_from}->N{n_to}",
    )


@dataclass(frozen=True, eq=False)
class IdentityCheck:
    estimate: NDArray[np.float64]  # (n, M), Monte Carlo E[score (s - mu)^T]
    stderr: NDArray[np.float64]
    expected: NDArray[np.float64]  # g.T
    max_deviation: float  # in standard-error units
    k: int

    def passed(self, n_stderr: float = 4.0) -> bool:
        return self.max_deviation <= n_stderr


def score_moment_identity_check(
    model: ModelSpec,
    sset: StatisticSet,
    summary: MomentSummary,
    k: int,
    seed: int,
    *,
    stream: int = 1,
    jobs: int = 1,
) -> IdentityCheck:
    """Compare a Monte Carlo ``E[score (s - mu)^T]`` with ``g.T``."""
    if not (model.has(Capability.SCORE) or model.has(Capability.LOG_DENSITY)):
        raise CapabilityMissing(f"{model.family} has neither a score nor a log-density")
    if k < 2:
        raise ValueError("k must be >= 2")
    u = draw_uniforms(seed, 0, k, model.n_obs, stream=stream, jobs=jobs)
    y = sample_at(model, model.theta, u)
    sc = score(model, y)
    z = eval_stats(sset, y) - summary.mu
    prod = sc[:, :, None] * z[:, None, :]
    est = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / np.sqrt(k)
    expected = summary.g.T
    gap = np.abs(est - expected)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(se > 0, gap / se, np.where(gap == 0, 0.0, np.inf))
    return IdentityCheck(est, se, expected, float(dev.max()), k)
