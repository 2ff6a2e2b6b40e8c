"""Semantic exception hierarchy shared by all maxlife modules."""


class MaxlifeError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(MaxlifeError, ValueError):
    """Array shapes or index ranges are inconsistent with the model."""


class NotPositiveDefinite(MaxlifeError):
    """A covariance (or covariance recursion output) failed factorization."""


class InvalidTransitionMatrix(MaxlifeError):
    """Transition matrix rows do not form probability distributions."""


class MalformedTable(MaxlifeError):
    """Life-table CSV violates the (age, qx) contract."""


class AgeOutOfRange(MaxlifeError):
    """Requested age or horizon falls outside the life table."""


class TiltedProbabilityOutOfRange(MaxlifeError):
    """A mortality tilt produced a probability outside [0, 1]."""


class SelectorOutOfWindow(MaxlifeError):
    """A discount/forward selector references steps outside the law's window."""


class PathExplosion(MaxlifeError):
    """Regime-path enumeration would exceed the configured guard."""


class GuaranteeZeroInCall(MaxlifeError):
    """Call-on-max event geometry needs a strictly positive guarantee."""


class NonFinitePayoff(MaxlifeError):
    """A Monte-Carlo payoff evaluated to NaN or infinity."""


class NearSingularCovariance(UserWarning):
    """A covariance needed diagonal regularization before factorization."""


class SingularOmega(UserWarning):
    """The one-step second-moment matrix was singular; pseudo-inverse used."""
