"""Model zoo.

Each :class:`ModelSpec` binds a family of i.i.d. scalar observations to a
parameter point ``theta`` and a sample size ``n_obs``. Families declare the
capabilities they support; ``transformed-gaussian`` can only be sampled,
which is the situation where a Fisher information is out of reach but
moments are not.

Gaussian models are parameterized by ``(mean, variance)``. Information
matrices are therefore per unit of variance, not of standard deviation
(the Jacobian ``d var / d sd = 2 sd`` would be needed to convert).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtri

from pimtool.errors import CapabilityMissing, DomainError
from pimtool.infomatrix import InfoMatrix
from pimtool.streams import draw_uniforms

__all__ = [
    "Capability",
    "ModelSpec",
    "SampleBatch",
    "analytic_fim",
    "log_density",
    "sample",
    "score",
    "FAMILIES",
]


class Capability(enum.Enum):
    SAMPLE = "sample"
    LOG_DENSITY = "log-density"
    SCORE = "score"
    ANALYTIC_FIM = "analytic-fim"
    ANALYTIC_MOMENTS = "analytic-moments"


_ALL = frozenset(Capability)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


class _Family:
    name: ClassVar[str]
    capabilities: ClassVar[frozenset[Capability]] = _ALL
    max_analytic_degree: ClassVar[int] = 2
    # maxent support of a single observation: "real", "half-line" or a tuple of points
    support: ClassVar[object] = "real"

    def n_params(self, model: ModelSpec) -> int:
        raise NotImplementedError

    def check(self, model: ModelSpec, theta: NDArray) -> str | None:
        """Return a reason string if ``theta`` is outside the open domain."""
        return None

    def base(self, u: NDArray) -> NDArray:
        """Parameter-free part of the inverse-CDF map, cacheable across ``theta``."""
        return u

    def from_base(self, model: ModelSpec, theta: NDArray, b: NDArray) -> NDArray:
        raise NotImplementedError

    def transform(self, model: ModelSpec, theta: NDArray, u: NDArray) -> NDArray:
        return self.from_base(model, theta, self.base(u))

    def logpdf(self, model: ModelSpec, theta: NDArray, y: NDArray) -> NDArray:
        raise NotImplementedError

    def score_obs(self, model: ModelSpec, theta: NDArray, y: NDArray) -> NDArray:
        """Per-observation score, shape ``y.shape + (n,)``."""
        raise NotImplementedError

    def fim1(self, model: ModelSpec, theta: NDArray) -> NDArray:
        raise NotImplementedError

    def raw_moment(self, model: ModelSpec, theta: NDArray, d: int) -> tuple[float, NDArray]:
        """``E[y**d]`` for one observation and its gradient in ``theta``."""
        raise NotImplementedError


class _Gaussian(_Family):
    name = "gaussian-iid"
    max_analytic_degree = 4

    def n_params(self, model):
        return 1 if model.known_var is not None else 2

    def _mv(self, model, theta):
        if model.known_var is not None:
            return theta[0], model.known_var
        return theta[0], theta[1]

    def check(self, model, theta):
        if model.known_var is not None:
            return None if model.known_var > 0 else "known variance must be > 0"
        return None if theta[1] > 0 else "variance must be > 0"

    def base(self, u):
        return ndtri(u)

    def from_base(self, model, theta, z):
        m, v = self._mv(model, theta)
        return m + math.sqrt(v) * z

    def logpdf(self, model, theta, y):
        m, v = self._mv(model, theta)
        return -0.5 * math.log(2 * math.pi * v) - (y - m) ** 2 / (2 * v)

    def score_obs(self, model, theta, y):
        m, v = self._mv(model, theta)
        r = y - m
        if model.known_var is not None:
            return (r / v)[..., None]
        return np.stack([r / v, (r**2 - v) / (2 * v * v)], axis=-1)

    def fim1(self, model, theta):
        m, v = self._mv(model, theta)
        if model.known_var is not None:
            return np.array([[1 / v]])
        return np.diag([1 / v, 1 / (2 * v * v)])

    def raw_moment(self, model, theta, d):
        m, v = self._mv(model, theta)
        val = dm = dv = 0.0
        for j in range(d // 2 + 1):
            coef = math.comb(d, 2 * j) * _double_factorial(2 * j - 1)
            p = d - 2 * j
            val += coef * m**p * v**j
            if p > 0:
                dm += coef * p * m ** (p - 1) * v**j
            if j > 0:
                dv += coef * m**p * j * v ** (j - 1)
        grad = np.array([dm]) if model.known_var is not None else np.array([dm, dv])
        return val, grad


class _Exponential(_Family):
    name = "exponential-iid"
    support = "half-line"

    def n_params(self, model):
        return 1

    def check(self, model, theta):
        return None if theta[0] > 0 else "rate must be > 0"

    def base(self, u):
        return -np.log1p(-u)

    def from_base(self, model, theta, e):
        return e / theta[0]

    def logpdf(self, model, theta, y):
        rate = theta[0]
        return np.where(y >= 0, math.log(rate) - rate * y, -np.inf)

    def score_obs(self, model, theta, y):
        return (1.0 / theta[0] - y)[..., None]

    def fim1(self, model, theta):
        return np.array([[1.0 / theta[0] ** 2]])

    def raw_moment(self, model, theta, d):
        rate = theta[0]
        val = math.factorial(d) / rate**d
        return val, np.array([-d * val / rate])


class _Laplace(_Family):
    name = "laplace-iid"

    def n_params(self, model):
        return 1

    def check(self, model, theta):
        return None if model.scale > 0 else "scale must be > 0"

    def base(self, u):
        return np.where(u < 0.5, np.log(2 * u), -np.log(2 * (1 - u)))

    def from_base(self, model, theta, e):
        return theta[0] + model.scale * e

    def logpdf(self, model, theta, y):
        b = model.scale
        return -math.log(2 * b) - np.abs(y - theta[0]) / b

    def score_obs(self, model, theta, y):
        # undefined at y == theta, a probability-zero event
        return (np.sign(y - theta[0]) / model.scale)[..., None]

    def fim1(self, model, theta):
        return np.array([[1.0 / model.scale**2]])

    def raw_moment(self, model, theta, d):
        loc, b = theta[0], model.scale
        val = grad = 0.0
        for k in range(0, d + 1, 2):
            central = math.factorial(k) * b**k
            p = d - k
            val += math.comb(d, k) * loc**p * central
            if p > 0:
                grad += math.comb(d, k) * p * loc ** (p - 1) * central
        return val, np.array([grad])


class _Bernoulli(_Family):
    name = "bernoulli-iid"
    support = (0.0, 1.0)

    def n_params(self, model):
        return 1

    def check(self, model, theta):
        return None if 0 < theta[0] < 1 else "p must lie in (0, 1)"

    def from_base(self, model, theta, u):
        return (u < theta[0]).astype(np.float64)

    def logpdf(self, model, theta, y):
        p = theta[0]
        return y * math.log(p) + (1 - y) * math.log1p(-p)

    def score_obs(self, model, theta, y):
        p = theta[0]
        return (y / p - (1 - y) / (1 - p))[..., None]

    def fim1(self, model, theta):
        p = theta[0]
        return np.array([[1.0 / (p * (1 - p))]])

    def raw_moment(self, model, theta, d):
        if d == 0:
            return 1.0, np.zeros(1)
        return float(theta[0]), np.ones(1)


class _TransformedGaussian(_Family):
    """``y = u + c u**3`` with ``u ~ N(theta[0], theta[1])``; density left implicit."""

    name = "transformed-gaussian"
    capabilities = frozenset({Capability.SAMPLE})

    def n_params(self, model):
        return 2

    def check(self, model, theta):
        return None if theta[1] > 0 else "variance of u must be > 0"

    def base(self, u):
        return ndtri(u)

    def from_base(self, model, theta, z):
        x = theta[0] + math.sqrt(theta[1]) * z
        return x + model.cubic * x * x * x


FAMILIES: dict[str, _Family] = {
    f.name: f for f in (_Gaussian(), _Exponential(), _Laplace(), _Bernoulli(), _TransformedGaussian())
}
ALIASES = {name.removesuffix("-iid"): name for name in FAMILIES}


def family_name(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in FAMILIES:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    return name


@dataclass(frozen=True)
class ModelSpec:
    """A family at a parameter point with ``n_obs`` i.i.d. observations.

    Family constants: ``cubic`` (transformed-gaussian), ``scale`` (Laplace
    ``b``), ``known_var`` (Gaussian with fixed variance; theta is then just
    the mean). ``restrict`` drops capabilities, e.g. to force the
    finite-difference score path.
    """

    family: str
    theta: tuple[float, ...]
    n_obs: int = 1
    cubic: float = 0.1
    scale: float = 1.0
    known_var: float | None = None
    restrict: frozenset[Capability] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", family_name(self.family))
        theta = tuple(float(t) for t in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "restrict", frozenset(self.restrict))
        if self.n_obs < 1:
            raise ValueError("n_obs must be a positive integer")
        if len(theta) != self.impl.n_params(self):
            raise DomainError(
                f"{self.family} expects {self.impl.n_params(self)} parameters, got {len(theta)}"
            )
        reason = self.domain_violation(theta)
        if reason is not None:
            raise DomainError(f"{self.family}: {reason} (theta={theta})")

    @property
    def impl(self) -> _Family:
        return FAMILIES[self.family]

    @property
    def n(self) -> int:
        return len(self.theta)

    @property
    def capabilities(self) -> frozenset[Capability]:
        caps = self.impl.capabilities - self.restrict
        if Capability.LOG_DENSITY not in caps:
            caps -= {Capability.SCORE}
        return caps | {Capability.SAMPLE}

    def has(self, cap: Capability) -> bool:
        return cap in self.capabilities

    def require(self, cap: Capability) -> None:
        if not self.has(cap):
            raise CapabilityMissing(f"{self.family} does not provide {cap.value}")

    def domain_violation(self, theta: ArrayLike) -> str | None:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return "non-finite parameter"
        return self.impl.check(self, theta)

    def in_domain(self, theta: ArrayLike) -> bool:
        return self.domain_violation(theta) is None

    def with_theta(self, theta: ArrayLike) -> ModelSpec:
        return replace(self, theta=tuple(np.asarray(theta, dtype=float)))

    def with_n_obs(self, n_obs: int) -> ModelSpec:
        return replace(self, n_obs=n_obs)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    draws: NDArray[np.float64]  # (k, N)
    seed: int
    substream_id: int = 0

    def __len__(self) -> int:
        return self.draws.shape[0]


def sample_at(model: ModelSpec, theta: ArrayLike, u: NDArray) -> NDArray:
    """Map uniforms of shape ``(k, N)`` to draws at ``theta`` (common random numbers)."""
    return model.impl.transform(model, np.asarray(theta, dtype=float), u)


def sample(
    model: ModelSpec, k: int, seed: int, *, start: int = 0, stream: int = 0, jobs: int = 1
) -> SampleBatch:
    """``k`` i.i.d. data vectors of length ``n_obs``.

    Draw ``j`` is a function of ``(model, seed, stream, start + j)`` only.
    """
    if k < 1:
        raise ValueError("k must be positive")
    u = draw_uniforms(seed, start, k, model.n_obs, stream=stream, jobs=jobs)
    return SampleBatch(sample_at(model, model.theta, u), seed=seed, substream_id=stream)


def _per_obs_logpdf(model: ModelSpec, theta: NDArray, y: NDArray) -> NDArray:
    return np.sum(model.impl.logpdf(model, theta, y), axis=-1)


def log_density(model: ModelSpec, y: ArrayLike) -> float | NDArray:
    """Joint log-density of ``y`` (shape ``(N,)`` or a batch ``(k, N)``)."""
    model.require(Capability.LOG_DENSITY)
    y = _check_obs(model, y)
    out = _per_obs_logpdf(model, np.asarray(model.theta), y)
    return float(out) if np.ndim(out) == 0 else out


def fd_step(theta_j: float) -> float:
    return 1e-5 * max(1.0, abs(theta_j))


def score(model: ModelSpec, y: ArrayLike) -> NDArray:
    """Gradient of the joint log-density in ``theta``.

    Uses the family's closed form when SCORE is available, else central
    differences of the log-density with step ``1e-5 * max(1, |theta_j|)``.
    Returns shape ``(n,)`` for one data vector or ``(k, n)`` for a batch.
    """
    y = _check_obs(model, y)
    theta = np.asarray(model.theta)
    if model.has(Capability.SCORE):
        return np.sum(model.impl.score_obs(model, theta, y), axis=-2)
    model.require(Capability.LOG_DENSITY)
    cols = []
    for j in range(model.n):
        h = fd_step(theta[j])
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        cols.append((_per_obs_logpdf(model, tp, y) - _per_obs_logpdf(model, tm, y)) / (2 * h))
    return np.stack(cols, axis=-1)


def analytic_fim(model: ModelSpec) -> InfoMatrix:
    """Closed-form Fisher information of ``n_obs`` observations."""
    model.require(Capability.ANALYTIC_FIM)
    f = model.n_obs * model.impl.fim1(model, np.asarray(model.theta))
    return InfoMatrix(f, kind="fim", method="analytic", theta=model.theta)


def _check_obs(model: ModelSpec, y: ArrayLike) -> NDArray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != model.n_obs:
        raise ValueError(f"expected observations with trailing length {model.n_obs}, got {y.shape}")
    return y
