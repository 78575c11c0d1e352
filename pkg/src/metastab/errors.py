"""Exception hierarchy shared by all modules."""


class MetastabError(Exception):
    """Base class for every error raised by the toolkit."""


# chain construction and linear algebra
class NegativeRate(MetastabError, ValueError):
    pass


class DuplicateEntry(MetastabError, ValueError):
    pass


class EmptyStateSet(MetastabError, ValueError):
    pass


class Reducible(MetastabError):
    """The chain (or the sub-generator involved) is not irreducible."""


class NonconvergentSeries(MetastabError):
    """Uniformization would need more terms than the configured guard."""


class SupportMismatch(MetastabError, ValueError):
    pass


# reductions
class TargetIsWholeSpace(MetastabError, ValueError):
    pass


class EmptySubset(MetastabError, ValueError):
    pass


class ReducibleReflection(Reducible):
    """The chain restricted to a set is not irreducible."""


class NonpositiveGamma(MetastabError, ValueError):
    pass


# potential theory
class Overlap(MetastabError, ValueError):
    pass


class NotReversible(MetastabError):
    pass


class BoundaryViolation(MetastabError, ValueError):
    pass


class NotAFlow(MetastabError, ValueError):
    pass


class EtaInA(MetastabError, ValueError):
    pass


# metastability
class PsiOnDelta(MetastabError, ValueError):
    pass


class NoBottoms(MetastabError, ValueError):
    pass


class ProductTooLarge(MetastabError):
    """Exact joint laws would exceed the state-space product guard.

    Use the Monte Carlo estimators in :mod:`metastab.simulate` instead.
    """


class PartitionError(MetastabError, ValueError):
    pass


# models
class ParameterOutOfRange(MetastabError, ValueError):
    pass


class StateSpaceTooLarge(MetastabError):
    pass


class SaddleNotFound(MetastabError):
    pass


class NonSmoothBoundary(MetastabError):
    pass


# simulation
class TimesBeyondHorizon(MetastabError, ValueError):
    pass


class NoExitsObserved(MetastabError):
    pass


# cli
class SpecParseError(MetastabError, ValueError):
    pass
