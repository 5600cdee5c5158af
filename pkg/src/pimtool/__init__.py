"""Moment-based lower bounds on Fisher information.

The Pearson information ``B = G^T Sigma^{-1} G`` is built from the mean
``mu(theta)``, covariance ``Sigma(theta)`` and Jacobian ``G = d mu / d theta``
of a statistic vector ``s(y)``. It never exceeds the Fisher information, grows
as statistics are added, and is the inverse asymptotic covariance of the
optimally weighted method-of-moments estimator.
"""

from pimtool.errors import PimError
from pimtool.fim import fim_or_none, mc_fim
from pimtool.gmm import MomentMap, estimate, mc_estimator_study
from pimtool.infomatrix import InfoMatrix
from pimtool.linalg import loewner_leq, min_eigenvalue, solve_spd
from pimtool.maxent import bound_chain_check, fit_maxent, maxent_for_model
from pimtool.models import ModelSpec, analytic_fim, sample, score
from pimtool.moments import analytic_moments, compute_moments, mc_moments
from pimtool.pim import combiner_bound, ladder, optimal_combiner, pim, pim_extend
from pimtool.statistics import StatisticSet, custom, monomial, monomial_ladder, parse_stats

__version__ = "0.1.0"

__all__ = [
    "InfoMatrix",
    "ModelSpec",
    "MomentMap",
    "PimError",
    "StatisticSet",
    "analytic_fim",
    "analytic_moments",
    "bound_chain_check",
    "combiner_bound",
    "compute_moments",
    "custom",
    "estimate",
    "fim_or_none",
    "fit_maxent",
    "ladder",
    "loewner_leq",
    "maxent_for_model",
    "mc_estimator_study",
    "mc_fim",
    "mc_moments",
    "min_eigenvalue",
    "monomial",
    "monomial_ladder",
    "optimal_combiner",
    "parse_stats",
    "pim",
    "pim_extend",
    "sample",
    "score",
    "solve_spd",
]
