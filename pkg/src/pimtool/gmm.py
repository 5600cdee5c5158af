"""Optimally weighted generalized method of moments.

The estimator minimizes ``V(theta) = 0.5 r^T W^{-1} r`` with
``r = s_obs - mu(theta)`` by scoring steps
``theta += (G^T W^{-1} G)^{-1} G^T W^{-1} r``: Gauss-Newton with the
Pearson information in place of the Hessian. The first pass uses
``W = I``; the second uses ``W = Sigma(theta_first)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pimtool.errors import (
    DomainExit,
    InsufficientStatistics,
    NotConverged,
    NotPositiveDefinite,
    PimError,
    SingularPim,
    StudyFailed,
    UnsupportedAnalytic,
)
from pimtool.linalg import cholesky, solve_spd, sym
from pimtool.models import ModelSpec, sample, sample_at
from pimtool.moments import (
    DEFAULT_FD_STEP,
    MomentSummary,
    analytic_moments,
    mc_moments,
    scale_to_n_obs,
)
from pimtool.pim import pim
from pimtool.statistics import StatisticSet, eval_stats
from pimtool.streams import draw_uniforms

__all__ = [
    "GmmResult",
    "MomentMap",
    "StudyReport",
    "estimate",
    "gmm_cost",
    "mc_estimator_study",
    "predicted_summary",
    "rough_inverse",
    "scoring",
]

log = logging.getLogger(__name__)

MAX_ITER = 200
MAX_HALVINGS = 30
STEP_TOL = 1e-10
GRAD_TOL = 1e-10
MAP_STREAM = 5
DATA_STREAM = 4


class MomentMap:
    """``theta -> (mu, G)`` and ``theta -> Sigma`` for one model and statistic set.

    Closed form when the family supports it; otherwise simulated moments
    from a fixed block of ``k`` uniforms, so ``mu(theta)`` is a smooth,
    deterministic function and ``G`` is its central difference.
    Averaged monomials are simulated with one observation per draw and the
    covariance divided by ``n_obs``.
    """

    def __init__(
        self,
        model: ModelSpec,
        sset: StatisticSet,
        method: str = "auto",
        *,
        k: int = 10**5,
        seed: int = 0,
        fd_step: float = DEFAULT_FD_STEP,
    ) -> None:
        self.model = model
        self.sset = sset
        self.fd_step = fd_step
        self.analytic = False
        if method in ("auto", "analytic"):
            try:
                analytic_moments(model, sset)
                self.analytic = True
            except UnsupportedAnalytic:
                if method == "analytic":
                    raise
        elif method != "mc":
            raise ValueError(f"unknown moment method {method!r}")
        if not self.analytic:
            self._n_sim = 1 if sset.is_monomial else model.n_obs
            u = draw_uniforms(seed, 0, k, self._n_sim, stream=MAP_STREAM)
            self._base = model.impl.base(u)
        self._cache: tuple[tuple[float, ...], NDArray, NDArray] | None = None
        self._mean_cache: tuple[tuple[float, ...], NDArray] | None = None

    def _check(self, theta: NDArray) -> None:
        reason = self.model.domain_violation(theta)
        if reason is not None:
            raise DomainExit(f"theta={theta.tolist()} outside the domain: {reason}")

    def _sim(self, theta: NDArray) -> NDArray:
        return eval_stats(self.sset, self.model.impl.from_base(self.model, theta, self._base))

    def mean(self, theta: ArrayLike) -> NDArray:
        theta = np.asarray(theta, dtype=np.float64)
        key = tuple(theta.tolist())
        if self._mean_cache is not None and self._mean_cache[0] == key:
            return self._mean_cache[1]
        self._check(theta)
        if self.analytic:
            mu = analytic_moments(self.model.with_theta(theta), self.sset).mu
        else:
            mu = self._sim(theta).mean(axis=0)
        self._mean_cache = (key, mu)
        return mu

    def __call__(self, theta: ArrayLike) -> tuple[NDArray, NDArray]:
        theta = np.asarray(theta, dtype=np.float64)
        key = tuple(theta.tolist())
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1], self._cache[2]
        self._check(theta)
        if self.analytic:
            s = analytic_moments(self.model.with_theta(theta), self.sset)
            mu, g = s.mu, s.g
        else:
            mu = self.mean(theta)
            g = np.empty((len(self.sset), theta.size))
            for j in range(theta.size):
                h = self.fd_step * max(1.0, abs(theta[j]))
                tp, tm = theta.copy(), theta.copy()
                tp[j] += h
                tm[j] -= h
                self._check(tp)
                self._check(tm)
                g[:, j] = (self._sim(tp).mean(axis=0) - self._sim(tm).mean(axis=0)) / (2 * h)
        self._cache = (key, mu, g)
        return mu, g

    def summary(self, theta: ArrayLike) -> MomentSummary:
        theta = np.asarray(theta, dtype=np.float64)
        if self.analytic:
            return analytic_moments(self.model.with_theta(theta), self.sset)
        mu, g = self(theta)
        s = self._sim(theta)
        z = s - mu
        sigma = z.T @ z / (len(z) - 1) * self._n_sim / self.model.n_obs
        return MomentSummary(mu, sigma, g, "simulated", tuple(theta.tolist()), tuple(self.sset.labels))

    def sigma(self, theta: ArrayLike) -> NDArray:
        return self.summary(theta).sigma

    @property
    def provenance(self) -> str:
        return "analytic-sigma" if self.analytic else "estimated-sigma"


def gmm_cost(theta: ArrayLike, s_obs: ArrayLike, weight: ArrayLike, moment_fn) -> float:
    """``0.5 (s_obs - mu(theta))^T weight^{-1} (s_obs - mu(theta))``.

    ``weight`` plays the role of the statistic covariance and is applied by
    a Cholesky solve; ``moment_fn`` maps ``theta`` to ``mu``.
    """
    r = np.asarray(s_obs, dtype=np.float64) - np.asarray(moment_fn(theta), dtype=np.float64)
    return 0.5 * float(r @ solve_spd(weight, r))


@dataclass(frozen=True, eq=False)
class ScoringTrace:
    theta: NDArray[np.float64]
    iterations: int
    converged: bool
    cost: float
    grad_norm: float
    costs: list[float] = field(default_factory=list)


def scoring(
    theta0: ArrayLike,
    s_obs: ArrayLike,
    weight: ArrayLike,
    mmap: MomentMap,
    *,
    max_iter: int = MAX_ITER,
) -> ScoringTrace:
    """Scoring iterations on ``V`` for a fixed weight, with step halving.

    A step is halved (at most 30 times) while it leaves the parameter domain
    or increases ``V``. Stops when the accepted step is at most
    ``1e-10 * max(1, ||theta||)`` or ``||grad V|| <= 1e-10``.
    """
    theta = np.array(theta0, dtype=np.float64)
    s_obs = np.asarray(s_obs, dtype=np.float64)
    w = sym(weight)
    cholesky(w)

    def cost(th):
        return gmm_cost(th, s_obs, w, mmap.mean)

    v = cost(theta)
    costs = [v]
    for it in range(1, max_iter + 1):
        mu, g = mmap(theta)
        r = s_obs - mu
        wg = solve_spd(w, g)
        grad = -(wg.T @ r)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= GRAD_TOL:
            return ScoringTrace(theta, it - 1, True, v, gnorm, costs)
        try:
            step = solve_spd(g.T @ wg, wg.T @ r)
        except NotPositiveDefinite:
            raise SingularPim(
                f"G^T W^-1 G is singular at theta={theta.tolist()}: parameters not identified"
            ) from None
        scale = max(1.0, float(np.linalg.norm(theta)))
        step_norm = float(np.linalg.norm(step))
        alpha, accepted, saw_interior = 1.0, False, False
        for _ in range(MAX_HALVINGS + 1):
            trial = theta + alpha * step
            if mmap.model.in_domain(trial):
                saw_interior = True
                v_trial = cost(trial)
                if v_trial <= v:
                    accepted = True
                    break
                if alpha * step_norm <= STEP_TOL * scale:
                    break
            alpha *= 0.5
        if not accepted:
            if not saw_interior:
                raise DomainExit(f"no halved step from {theta.tolist()} stays in the domain")
            # V cannot decrease any further in floating point
            done = step_norm <= 1e-6 * scale
            return ScoringTrace(theta, it, done, v, gnorm, costs)
        theta, v = trial, v_trial
        costs.append(v)
        if alpha * step_norm <= STEP_TOL * scale:
            return ScoringTrace(theta, it, True, v, gnorm, costs)
    return ScoringTrace(theta, max_iter, False, v, float("nan"), costs)


def rough_inverse(model: ModelSpec, sset: StatisticSet, s_obs: ArrayLike) -> NDArray | None:
    """Closed-form method-of-moments starting point, or ``None`` if unavailable."""
    if not sset.is_monomial:
        return None
    vals = {d: float(v) for d, v in zip(sset.degrees, np.asarray(s_obs))}
    fam = model.family
    if 1 not in vals:
        return None
    m1 = vals[1]
    if fam == "gaussian-iid":
        if model.known_var is not None:
            return np.array([m1])
        if 2 in vals and vals[2] - m1 * m1 > 0:
            return np.array([m1, vals[2] - m1 * m1])
        return None
    if fam == "exponential-iid":
        return np.array([1.0 / m1]) if m1 > 0 else None
    if fam == "laplace-iid":
        return np.array([m1])
    if fam == "bernoulli-iid":
        return np.array([min(max(m1, 1e-6), 1 - 1e-6)])
    return None


@dataclass(frozen=True, eq=False)
class GmmResult:
    theta_hat: NDArray[np.float64]
    iterations: int
    converged: bool
    final_cost: float
    weight_provenance: str
    asymptotic_cov: NDArray[np.float64]
    first_step: NDArray[np.float64] | None = None
    grad_norm: float = 0.0


def estimate(
    model: ModelSpec,
    s_obs: ArrayLike,
    sset: StatisticSet,
    init: ArrayLike | None = None,
    *,
    mmap: MomentMap | None = None,
    method: str = "auto",
    k: int = 10**5,
    seed: int = 0,
    two_step: bool = True,
    max_iter: int = MAX_ITER,
) -> GmmResult:
    """Two-step GMM estimate of ``theta`` from observed statistics.

    ``model`` supplies the family, constants and ``n_obs``; its ``theta`` is
    not used. ``init`` defaults to :func:`rough_inverse`. The reported
    ``asymptotic_cov`` is the inverse Pearson information at the estimate.
    """
    s_obs = np.asarray(s_obs, dtype=np.float64)
    if len(sset) < model.n:
        raise SingularPim(
            f"need M >= n statistics to identify theta (M={len(sset)}, n={model.n})"
        )
    if s_obs.shape != (len(sset),):
        raise ValueError(f"s_obs must have length {len(sset)}")
    if mmap is None:
        mmap = MomentMap(model, sset, method, k=k, seed=seed)
    if init is None:
        init = rough_inverse(model, sset, s_obs)
        if init is None:
            raise ValueError(f"no closed-form starting point for {model.family}; pass init")
    init = np.asarray(init, dtype=np.float64)
    if not model.in_domain(init):
        raise DomainExit(f"initial point {init.tolist()} is outside the parameter domain")

    first = scoring(init, s_obs, np.eye(len(sset)), mmap, max_iter=max_iter)
    if not first.converged:
        raise NotConverged(f"identity-weighted pass stopped after {first.iterations} iterations")
    provenance = "identity-first-step"
    trace = first
    iterations = first.iterations
    if two_step:
        try:
            weight = mmap.sigma(first.theta)
            trace = scoring(first.theta, s_obs, weight, mmap, max_iter=max_iter)
        except NotPositiveDefinite as exc:
            raise SingularPim(f"Sigma at the first-step estimate is singular: {exc}") from None
        provenance = mmap.provenance
        iterations += trace.iterations
        if not trace.converged:
            raise NotConverged(f"optimally weighted pass stopped after {trace.iterations} iterations")
    try:
        info = pim(mmap.summary(trace.theta))
        cov = solve_spd(info.matrix, np.eye(model.n))
    except (NotPositiveDefinite, PimError) as exc:
        if isinstance(exc, InsufficientStatistics):
            raise
        raise SingularPim(f"Pearson information at the estimate is not invertible: {exc}") from None
    return GmmResult(
        theta_hat=trace.theta,
        iterations=iterations,
        converged=True,
        final_cost=trace.cost,
        weight_provenance=provenance,
        asymptotic_cov=sym(cov),
        first_step=first.theta,
        grad_norm=trace.grad_norm,
    )


@dataclass(frozen=True, eq=False)
class StudyReport:
    reps: int
    empirical_cov: NDArray[np.float64]
    predicted_cov: NDArray[np.float64]
    max_relative_diagonal_error: float
    bias: NDArray[np.float64]
    bias_stderr: NDArray[np.float64]
    theta_true: NDArray[np.float64]
    estimates: NDArray[np.float64]  # (reps, n); NaN rows for failed reps
    iterations: NDArray[np.int64]
    converged: NDArray[np.bool_]
    failures: dict[int, str]
    pim_method: str = ""

    @property
    def relative_diagonal_errors(self) -> NDArray[np.float64]:
        return np.abs(np.diag(self.empirical_cov) / np.diag(self.predicted_cov) - 1)

    @property
    def bias_z(self) -> NDArray[np.float64]:
        return self.bias / self.bias_stderr


def predicted_summary(
    model: ModelSpec, sset: StatisticSet, *, method: str = "auto", k: int = 10**6, seed: int = 0
) -> MomentSummary:
    """Moments at the true ``theta`` for ``model.n_obs`` observations.

    Without closed forms, averaged monomials are simulated with one
    observation per draw and rescaled to ``n_obs``.
    """
    if method in ("auto", "analytic"):
        try:
            return analytic_moments(model, sset)
        except UnsupportedAnalytic:
            if method == "analytic":
                raise
    if sset.is_monomial:
        one = mc_moments(model.with_n_obs(1), sset, k, seed)
        return scale_to_n_obs(one, 1, model.n_obs, sset)
    return mc_moments(model, sset, k, seed)


def mc_estimator_study(
    model: ModelSpec,
    sset: StatisticSet,
    n_obs: int,
    reps: int,
    seed: int,
    *,
    method: str = "auto",
    k_map: int = 10**5,
    k_pim: int = 10**6,
    init: ArrayLike | None = None,
    jobs: int = 1,
) -> StudyReport:
    """Empirical covariance of two-step GMM estimates against the inverse PIM.

    Dataset ``i`` is substream ``i`` of the data stream, so the report is
    identical for every ``jobs`` setting. ``init`` (default: the closed-form
    rough inverse, else the true ``theta``) seeds every replication.
    """
    if reps < 100:
        raise ValueError("a study needs reps >= 100")
    truth = model.with_n_obs(n_obs)
    theta_true = np.asarray(truth.theta)
    b = pim(predicted_summary(truth, sset, method=method, k=k_pim, seed=seed))
    try:
        predicted = sym(solve_spd(b.matrix, np.eye(truth.n)))
    except NotPositiveDefinite as exc:
        raise SingularPim(f"PIM at the true theta is not invertible: {exc}") from None

    data = sample(truth, reps, seed, stream=DATA_STREAM).draws
    s_all = eval_stats(sset, data)
    mmap = MomentMap(truth, sset, method, k=k_map, seed=seed)
    fallback = None if init is not None else theta_true

    def one(i: int):
        start = init
        if start is None and rough_inverse(truth, sset, s_all[i]) is None:
            start = fallback
        try:
            res = estimate(truth, s_all[i], sset, start, mmap=_fresh(mmap))
            return res.theta_hat, res.iterations, None
        except PimError as exc:
            return None, 0, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(i) for i in range(reps)]

    est = np.full((reps, truth.n), np.nan)
    iters = np.zeros(reps, dtype=np.int64)
    failures: dict[int, str] = {}
    for i, (th, it, err) in enumerate(results):
        if err is None:
            est[i], iters[i] = th, it
        else:
            failures[i] = err
    if len(failures) >= 0.01 * reps:
        raise StudyFailed(f"{len(failures)} of {reps} replications failed; first: {next(iter(failures.values()))}")
    if failures:
        log.warning("excluding %d failed replications", len(failures))
    ok = est[~np.isnan(est).any(axis=1)]
    emp = sym(np.atleast_2d(np.cov(ok, rowvar=False, ddof=1)))
    bias = ok.mean(axis=0) - theta_true
    bias_se = np.sqrt(np.diag(emp) / len(ok))
    rel = np.abs(np.diag(emp) / np.diag(predicted) - 1)
    return StudyReport(
        reps=reps,
        empirical_cov=emp,
        predicted_cov=predicted,
        max_relative_diagonal_error=float(rel.max()),
        bias=bias,
        bias_stderr=bias_se,
        theta_true=theta_true,
        estimates=est,
        iterations=iters,
        converged=~np.isnan(est).any(axis=1),
        failures=failures,
        pim_method=b.method,
    )


def _fresh(mmap: MomentMap) -> MomentMap:
    """Shallow copy with its own cache, for use from worker threads."""
    clone = object.__new__(MomentMap)
    clone.__dict__.update(mmap.__dict__)
    clone._cache = clone._mean_cache = None
    return clone
