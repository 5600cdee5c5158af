"""Exception hierarchy.

Every error raised for a numerical or modelling reason derives from
:class:`PimError`, so the CLI can report ``type(exc).__name__`` verbatim and
exit with status 1.
"""


class PimError(Exception):
    """Base class for computation errors."""


class DimensionMismatch(PimError, ValueError):
    pass


class NotPositiveDefinite(PimError):
    """Cholesky pivot fell below ``eps * trace / dim``."""


class CapabilityMissing(PimError):
    pass


class DomainError(PimError, ValueError):
    """Parameter outside the open domain of its family."""


class DuplicateDescriptor(PimError, ValueError):
    pass


class InsufficientStatistics(PimError, ValueError):
    """Fewer statistics than parameters (need M >= n)."""


class UnsupportedAnalytic(PimError):
    pass


class SingularSigma(PimError):
    pass


class RankDeficientCombiner(PimError):
    pass


class NonPositiveSchur(PimError):
    pass


class Infeasible(PimError):
    pass


class NotConverged(PimError):
    pass


class SingularPim(PimError):
    pass


class DomainExit(PimError):
    pass


class StudyFailed(PimError):
    pass
