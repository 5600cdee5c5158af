"""Reference Fisher information: closed form, or a Monte Carlo average of
score outer products when only a density is available."""

from __future__ import annotations

import numpy as np

from pimtool.errors import CapabilityMissing
from pimtool.infomatrix import InfoMatrix
from pimtool.models import Capability, ModelSpec, analytic_fim, sample, score

__all__ = ["analytic_fim", "fim_or_none", "mc_fim"]

# keeps FIM draws independent of moment draws under the same seed
FIM_STREAM = 2


def mc_fim(model: ModelSpec, k: int, seed: int, *, jobs: int = 1) -> InfoMatrix:
    """Sample average of ``score(y) score(y)^T`` over ``k`` draws.

    Uses the closed-form score when the family has one; otherwise the
    finite-difference score, whose O(h^2) error slightly inflates the
    estimate (``method`` then ends in ``fd-score``).
    """
    if not (model.has(Capability.SCORE) or model.has(Capability.LOG_DENSITY)):
        raise CapabilityMissing(f"{model.family} has no density, so its FIM is unavailable")
    if k < 2:
        raise ValueError("k must be >= 2")
    y = sample(model, k, seed, stream=FIM_STREAM, jobs=jobs).draws
    sc = score(model, y)
    prod = sc[:, :, None] * sc[:, None, :]
    f = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / np.sqrt(k)
    method = "monte-carlo" if model.has(Capability.SCORE) else "monte-carlo;fd-score"
    return InfoMatrix(f, kind="fim", method=method, theta=model.theta, stderr=se)


def fim_or_none(model: ModelSpec, k: int = 10**6, seed: int = 0, *, jobs: int = 1) -> InfoMatrix | None:
    """Best available FIM: closed form, else Monte Carlo, else ``None``."""
    if model.has(Capability.ANALYTIC_FIM):
        return analytic_fim(model)
    if model.has(Capability.SCORE) or model.has(Capability.LOG_DENSITY):
        return mc_fim(model, k, seed, jobs=jobs)
    return None
