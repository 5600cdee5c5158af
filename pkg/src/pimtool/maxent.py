"""Moment-constrained maximum-entropy fits and the misspecification chain.

The maxent density for averaged monomials over ``N`` i.i.d. observations
factorizes into ``N`` copies of a one-observation density
``exp(eta^T t(x) - A(eta))`` with ``nu = N eta`` and ``lambda0 = N A(eta)``.
``A`` is evaluated on a discrete rule: the support points themselves, or
Gauss-Hermite / Gauss-Laguerre nodes on a shifted and scaled axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, roots_hermitenorm, roots_laguerre

from pimtool.errors import CapabilityMissing, Infeasible, NotConverged, NotPositiveDefinite
from pimtool.fim import fim_or_none
from pimtool.infomatrix import InfoMatrix
from pimtool.linalg import loewner_leq, solve_spd, sym
from pimtool.models import Capability, ModelSpec, fd_step, sample, score
from pimtool.moments import MomentSummary, compute_moments
from pimtool.pim import pim
from pimtool.statistics import StatisticSet, eval_stats

__all__ = [
    "CrossTerm",
    "FiniteSupport",
    "HalfLine",
    "MaxEntFit",
    "MisspecReport",
    "RealLine",
    "bound_chain_check",
    "cross_term",
    "fit_maxent",
    "maxent_for_model",
    "misspecified_fim",
    "structural_obstruction",
    "support_for",
    "tight_condition_residual",
]

MAX_ITER = 100
CROSS_STREAM = 3
_HERMITE_MAX = 512
_LAGUERRE_MAX = 128
_START_NODES = 32


@dataclass(frozen=True)
class FiniteSupport:
    points: tuple[float, ...]

    def __init__(self, points: ArrayLike) -> None:
        object.__setattr__(self, "points", tuple(float(p) for p in np.ravel(points)))
        if len(self.points) < 2:
            raise ValueError("finite support needs at least two points")


@dataclass(frozen=True)
class RealLine:
    pass


@dataclass(frozen=True)
class HalfLine:
    """``[0, inf)``."""


Support = FiniteSupport | RealLine | HalfLine


def support_for(model: ModelSpec) -> Support:
    s = model.impl.support
    if s == "real":
        return RealLine()
    if s == "half-line":
        return HalfLine()
    return FiniteSupport(s)


@lru_cache(maxsize=32)
def _hermite(n: int) -> tuple[NDArray, NDArray]:
    t, w = roots_hermitenorm(n)
    with np.errstate(divide="ignore"):
        return t, np.log(w) + 0.5 * t * t


@lru_cache(maxsize=32)
def _laguerre(n: int) -> tuple[NDArray, NDArray]:
    t, w = roots_laguerre(n)
    with np.errstate(divide="ignore"):
        return t, np.log(w) + t


@dataclass(frozen=True)
class _Rule:
    """Nodes ``x`` and log-weights so that ``int f dx ~ sum exp(logw) f(x)``."""

    support: Support
    center: float = 0.0
    scale: float = 1.0
    nodes: int = 0

    def grid(self) -> tuple[NDArray, NDArray]:
        if isinstance(self.support, FiniteSupport):
            x = np.array(self.support.points)
            return x, np.zeros_like(x)
        if isinstance(self.support, RealLine):
            t, lw = _hermite(self.nodes)
            return self.center + self.scale * t, lw + np.log(self.scale)
        t, lw = _laguerre(self.nodes)
        return self.scale * t, lw + np.log(self.scale)

    @property
    def refinable(self) -> bool:
        if isinstance(self.support, FiniteSupport):
            return False
        cap = _HERMITE_MAX if isinstance(self.support, RealLine) else _LAGUERRE_MAX
        return 2 * self.nodes <= cap

    def refined(self) -> _Rule:
        return replace(self, nodes=2 * self.nodes)


def _initial_rule(support: Support, degrees: list[int], mu: NDArray) -> _Rule:
    if isinstance(support, FiniteSupport):
        return _Rule(support)
    first = {d: mu[i] for i, d in enumerate(degrees)}
    if isinstance(support, RealLine):
        center = first.get(1, 0.0)
        var = first[2] - center**2 if 2 in first else 1.0
        return _Rule(support, center, float(np.sqrt(var)) if var > 0 else 1.0, _START_NODES)
    scale = first.get(1, 1.0)
    return _Rule(support, 0.0, float(scale) if scale > 0 else 1.0, _START_NODES)


def _normalizable(support: Support, degrees: list[int], eta: NDArray) -> bool:
    if isinstance(support, FiniteSupport):
        return bool(np.all(np.isfinite(eta)))
    top = int(np.argmax(degrees))
    if isinstance(support, RealLine) and degrees[top] % 2:
        return False
    return bool(eta[top] < 0)


def _initial_eta(rule: _Rule, degrees: list[int]) -> NDArray:
    eta = np.zeros(len(degrees))
    if isinstance(rule.support, FiniteSupport):
        return eta
    top = int(np.argmax(degrees))
    if isinstance(rule.support, RealLine):
        v = rule.scale**2
        for i, d in enumerate(degrees):
            if d == 1:
                eta[i] = rule.center / v
            elif d == 2:
                eta[i] = -0.5 / v
        if degrees[top] > 2:
            eta[top] = -1e-6 / rule.scale ** degrees[top]
        return eta
    for i, d in enumerate(degrees):
        if d == 1:
            eta[i] = -1.0 / rule.scale
    if degrees[top] > 1:
        eta[top] = -1e-6 / rule.scale ** degrees[top]
    return eta


def _moments_on_rule(
    eta: NDArray, tx: NDArray, logw: NDArray
) -> tuple[float, NDArray, NDArray]:
    """Log-partition, mean and covariance of ``t`` under ``exp(eta^T t - A)``."""
    logits = logw + tx @ eta
    a = float(logsumexp(logits))
    p = np.exp(logits - a)
    mean = p @ tx
    z = tx - mean
    cov = sym((z * p[:, None]).T @ z)
    return a, mean, cov


@dataclass(frozen=True, eq=False)
class MaxEntFit:
    """Maximum-entropy fit for ``n_obs`` observations.

    ``lam`` and ``lambda0`` are the natural parameters and log-partition of
    the joint density; ``d_lambda`` (M x n) and ``d_lambda0`` (n,) are filled
    by :func:`maxent_for_model` from refits at ``theta +/- h``.
    """

    lam: NDArray[np.float64]
    lambda0: float
    support: Support
    nodes: int
    converged: bool
    residual: float
    iterations: int
    target_mu: NDArray[np.float64]
    n_obs: int = 1
    mean: NDArray[np.float64] | None = None
    cov: NDArray[np.float64] | None = None  # Cov of the averaged statistics under the fit
    d_lambda: NDArray[np.float64] | None = None
    d_lambda0: NDArray[np.float64] | None = None
    theta: tuple[float, ...] = ()
    rule: _Rule | None = None

    @property
    def eta(self) -> NDArray[np.float64]:
        return self.lam / self.n_obs


def _newton(
    rule: _Rule, degrees: list[int], mu: NDArray, eta: NDArray, tol: float
) -> tuple[NDArray, float, NDArray, NDArray, int, bool]:
    x, logw = rule.grid()
    tx = np.power.outer(x, np.asarray(degrees, dtype=float))
    support = rule.support

    def dual(e):
        a, mean, cov = _moments_on_rule(e, tx, logw)
        return a - e @ mu, a, mean, cov

    if not _normalizable(support, degrees, eta):
        raise Infeasible("initial natural parameters are not normalizable")
    d, a, mean, cov = dual(eta)
    norms = [float(np.linalg.norm(eta))]
    for it in range(MAX_ITER + 1):
        grad = mean - mu
        if np.linalg.norm(grad) <= tol:
            return eta, a, mean, cov, it, True
        if it == MAX_ITER:
            break
        try:
            step = solve_spd(cov, grad)
        except NotPositiveDefinite:
            raise Infeasible(
                "fit covariance became singular: target moments lie on the boundary of "
                "the moment set or the statistics are dependent on this support"
            ) from None
        alpha = 1.0
        for _ in range(60):
            trial = eta - alpha * step
            if _normalizable(support, degrees, trial):
                d_new, a_new, m_new, c_new = dual(trial)
                if np.isfinite(d_new) and d_new <= d + 1e-4 * alpha * (grad @ -step) + 1e-15 * abs(d):
                    break
            alpha *= 0.5
        else:
            raise Infeasible("no descent step keeps the fit normalizable")
        eta, d, a, mean, cov = trial, d_new, a_new, m_new, c_new
        norms.append(float(np.linalg.norm(eta)))
        if len(norms) > 20 and norms[-1] > 1e3 * max(1.0, norms[-21]):
            raise Infeasible("natural parameters diverge; target moments are not attainable")
    return eta, a, mean, cov, MAX_ITER, False


def structural_obstruction(support: Support, sset: StatisticSet) -> str | None:
    """Why no target can make ``exp(eta^T s)`` normalizable here, or None.

    On the real line the highest-degree monomial must be even so that a
    negative coefficient can dominate both tails.
    """
    if not sset.is_monomial:
        return "maxent fits support monomial statistics only"
    if isinstance(support, RealLine) and max(sset.degrees) % 2:
        return "real-line maxent needs an even top-degree statistic"
    return None


def fit_maxent(
    support: Support,
    sset: StatisticSet,
    target_mu: ArrayLike,
    *,
    n_obs: int = 1,
    init: ArrayLike | None = None,
    rule: _Rule | None = None,
) -> MaxEntFit:
    """Maximum-entropy density matching ``E[s] = target_mu``.

    Damped Newton on the convex dual ``A(eta) - eta^T mu``; stops when the
    moment residual is at most ``1e-10 * max(1, ||mu||)`` or after 100
    iterations (``converged=False``). For continuous supports the node count
    doubles until the log-partition moves by less than ``1e-12``.
    ``init`` is a warm start for the per-observation parameters.
    """
    if not sset.is_monomial:
        raise ValueError("maxent fits support monomial statistics only")
    if (reason := structural_obstruction(support, sset)) is not None:
        raise Infeasible(reason)
    degrees = sset.degrees
    mu = np.asarray(target_mu, dtype=np.float64).reshape(len(degrees))
    tol = 1e-10 * max(1.0, float(np.linalg.norm(mu)))
    if isinstance(support, FiniteSupport) and len(degrees) == 1:
        vals = np.asarray(support.points) ** degrees[0]
        if not vals.min() < mu[0] < vals.max():
            raise Infeasible(f"target {mu[0]} is outside the open range ({vals.min()}, {vals.max()})")
    if rule is None:
        rule = _initial_rule(support, degrees, mu)
    eta = _initial_eta(rule, degrees) if init is None else np.array(init, dtype=np.float64)

    eta, a, mean, cov, iters, ok = _newton(rule, degrees, mu, eta, tol)
    while ok and rule.refinable:
        finer = rule.refined()
        x, logw = finer.grid()
        a_fine = _moments_on_rule(eta, np.power.outer(x, np.asarray(degrees, float)), logw)[0]
        if abs(a_fine - a) < 1e-12:
            break
        rule = finer
        eta, a, mean, cov, more, ok = _newton(rule, degrees, mu, eta, tol)
        iters += more
    return MaxEntFit(
        lam=n_obs * eta,
        lambda0=n_obs * a,
        support=support,
        nodes=rule.nodes,
        converged=ok,
        residual=float(np.linalg.norm(mean - mu)),
        iterations=iters,
        target_mu=mu,
        n_obs=n_obs,
        mean=mean,
        cov=cov / n_obs,
        rule=rule,
    )


def maxent_for_model(
    model: ModelSpec,
    sset: StatisticSet,
    support: Support | None = None,
    *,
    method: str = "auto",
    k: int = 10**6,
    seed: int = 0,
    target_shift: ArrayLike | None = None,
) -> MaxEntFit:
    """Maxent fit at the model's moments plus ``d lambda / d theta`` by refits.

    Refits at ``theta +/- h e_j`` (``h = 1e-5 * max(1, |theta_j|)``) reuse the
    center fit's quadrature rule and warm-start from its parameters.
    ``target_shift`` offsets every target (center and refits) to produce a
    deliberately mismatched fit.
    """
    support = support_for(model) if support is None else support
    shift = 0.0 if target_shift is None else np.asarray(target_shift, dtype=np.float64)

    def target(theta):
        summ = compute_moments(model.with_theta(theta), sset, method, k=k, seed=seed)
        return summ.mu + shift

    center = fit_maxent(support, sset, target(model.theta), n_obs=model.n_obs)
    if not center.converged:
        raise NotConverged(f"maxent fit did not converge (residual {center.residual:.3e})")
    d_lam = np.empty((len(sset), model.n))
    d_lam0 = np.empty(model.n)
    for j in range(model.n):
        h = fd_step(model.theta[j])
        ends = []
        for sign in (+1, -1):
            theta = np.array(model.theta)
            theta[j] += sign * h
            fit = fit_maxent(
                support, sset, target(theta), n_obs=model.n_obs, init=center.eta, rule=center.rule
            )
            if not fit.converged:
                raise NotConverged(f"maxent refit at {theta} did not converge")
            ends.append(fit)
        d_lam[:, j] = (ends[0].lam - ends[1].lam) / (2 * h)
        d_lam0[j] = (ends[0].lambda0 - ends[1].lambda0) / (2 * h)
    return replace(center, d_lambda=d_lam, d_lambda0=d_lam0, theta=model.theta)


def _require_derivative(fit: MaxEntFit) -> NDArray:
    if not fit.converged:
        raise NotConverged("maxent fit did not converge")
    if fit.d_lambda is None:
        raise ValueError("fit has no d_lambda; build it with maxent_for_model")
    return fit.d_lambda


def misspecified_fim(fit: MaxEntFit, sigma_true: ArrayLike) -> InfoMatrix:
    """``d_lambda^T Sigma d_lambda`` with ``Sigma`` the true statistic covariance."""
    dl = _require_derivative(fit)
    return InfoMatrix(
        sym(dl.T @ sym(sigma_true) @ dl), kind="misspecified", method="maxent", theta=fit.theta
    )


@dataclass(frozen=True, eq=False)
class CrossTerm:
    matrix: NDArray[np.float64]
    stderr: NDArray[np.float64]
    k: int


def cross_term(
    fit: MaxEntFit, model: ModelSpec, sset: StatisticSet, k: int, seed: int, *, jobs: int = 1
) -> CrossTerm:
    """Monte Carlo ``E[(score - m)(m)^T] + E[m (score - m)^T]`` under the true model.

    ``m = d_lambda^T (s - E_fit[s])`` is the score of the maxent family and
    ``score - m`` the score of ``ln(p / p_maxent)``.
    """
    dl = _require_derivative(fit)
    if not (model.has(Capability.SCORE) or model.has(Capability.LOG_DENSITY)):
        raise CapabilityMissing(f"{model.family} has no score; the cross term needs one")
    y = sample(model, k, seed, stream=CROSS_STREAM, jobs=jobs).draws
    sc = score(model, y)
    m = (eval_stats(sset, y) - fit.target_mu) @ dl
    a = (sc - m)[:, :, None] * m[:, None, :]
    terms = a + np.swapaxes(a, 1, 2)
    return CrossTerm(terms.mean(axis=0), terms.std(axis=0, ddof=1) / np.sqrt(k), k)


def tight_condition_residual(fit: MaxEntFit, summary: MomentSummary) -> float:
    """Relative Frobenius distance between ``d_lambda`` and ``Sigma^{-1} G``."""
    dl = _require_derivative(fit)
    opt = solve_spd(summary.sigma, summary.g)
    return float(np.linalg.norm(dl - opt) / max(1.0, np.linalg.norm(opt)))


@dataclass(frozen=True, eq=False)
class MisspecReport:
    f_star: InfoMatrix
    f_tilde: NDArray[np.float64]
    f_tilde_stderr: NDArray[np.float64]
    pim: InfoMatrix
    fim: InfoMatrix | None
    lower_margin: float  # lambda_min(PIM - (F* + F~))
    upper_margin: float | None  # lambda_min(FIM - PIM)
    lower_ok: bool
    upper_ok: bool
    gap_identity_residual: float
    gap_budget: float
    tight_residual: float
    fit: MaxEntFit

    @property
    def chain_holds(self) -> bool:
        return self.lower_ok and self.upper_ok

    @property
    def gap_identity_ok(self) -> bool:
        return self.gap_identity_residual <= self.gap_budget


def bound_chain_check(
    model: ModelSpec,
    sset: StatisticSet,
    k: int = 10**5,
    seed: int = 0,
    *,
    support: Support | None = None,
    method: str = "auto",
    n_stderr: float = 5.0,
    fit: MaxEntFit | None = None,
    jobs: int = 1,
) -> MisspecReport:
    """Assemble ``F*``, ``F~``, PIM and FIM and check ``F* + F~ <= PIM <= FIM``.

    Monte Carlo legs are compared with an absolute Loewner tolerance of
    ``n_stderr`` times the Frobenius norm of their entrywise standard
    errors. The gap identity residual is budgeted the same way plus a
    finite-difference allowance of ``1e-6 * max(1, ||PIM||_F)``.
    """
    summary = compute_moments(model, sset, method, k=k, seed=seed, jobs=jobs)
    b = pim(summary)
    if fit is None:
        fit = maxent_for_model(model, sset, support, method=method, k=k, seed=seed)
    f_star = misspecified_fim(fit, summary.sigma)
    ct = cross_term(fit, model, sset, k, seed, jobs=jobs)
    fim = fim_or_none(model, k, seed, jobs=jobs)

    fd_allow = 1e-6 * max(1.0, float(np.linalg.norm(b.matrix)))
    mc_tol = n_stderr * float(np.linalg.norm(ct.stderr))
    if summary.mc_stderr_sigma is not None:
        # F* + F~ ~ G^T D + D^T G - D^T Sigma D: propagate moment noise through D = d_lambda
        dl_norm = float(np.linalg.norm(fit.d_lambda))
        mc_tol += n_stderr * (
            2 * float(np.linalg.norm(summary.mc_stderr_g)) * dl_norm
            + float(np.linalg.norm(summary.mc_stderr_sigma)) * dl_norm**2
        )
    lower = loewner_leq(f_star.matrix + ct.matrix, b.matrix, 1e-8, abs_tol=mc_tol + fd_allow)

    upper_ok, upper_margin = True, None
    if fim is not None:
        up_tol = 0.0 if fim.stderr is None else n_stderr * float(np.linalg.norm(fim.stderr))
        upper = loewner_leq(b.matrix, fim.matrix, 1e-8, abs_tol=up_tol)
        upper_ok, upper_margin = upper.holds, upper.min_eigenvalue_of_difference

    dl = fit.d_lambda
    gap_dir = solve_spd(summary.sigma, summary.g) - dl
    predicted = b.matrix - gap_dir.T @ summary.sigma @ gap_dir
    resid = float(np.linalg.norm(f_star.matrix + ct.matrix - predicted))
    return MisspecReport(
        f_star=f_star,
        f_tilde=ct.matrix,
        f_tilde_stderr=ct.stderr,
        pim=b,
        fim=fim,
        lower_margin=lower.min_eigenvalue_of_difference,
        upper_margin=upper_margin,
        lower_ok=lower.holds,
        upper_ok=upper_ok,
        gap_identity_residual=resid,
        gap_budget=mc_tol + fd_allow,
        tight_residual=tight_condition_residual(fit, summary),
        fit=fit,
    )
