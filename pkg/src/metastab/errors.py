"""Exception hierarchy.

Every error raised by the library derives from :class:`MetastabError`, so
callers (and the CLI) can catch the whole family at once.  Errors that signal
floating point breakdown rather than bad input derive from
:class:`NumericalError`.
"""


class MetastabError(Exception):
    """Base class for all library errors."""


class NumericalError(MetastabError):
    """A solve or eigen-decomposition broke down."""


# chain construction ---------------------------------------------------------

class Reducible(MetastabError):
    """The positive-rate graph is not strongly connected."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class NotReversible(MetastabError):
    """Detailed balance fails beyond the configured tolerance."""


class NegativeRate(MetastabError):
    pass


class DimensionMismatch(MetastabError):
    pass


class EmptySubset(MetastabError):
    pass


class ZeroMass(MetastabError):
    pass


# transforms -----------------------------------------------------------------

class SolveFailure(NumericalError):
    pass


class ReducibleReflection(Reducible):
    """A well falls apart once jumps leaving it are removed."""


class NonpositiveGamma(MetastabError):
    pass


class StateOutsideWells(MetastabError):
    pass


class InvalidPartition(MetastabError):
    pass


# potential ------------------------------------------------------------------

class OverlappingSets(MetastabError):
    pass


class TrialViolatesBoundary(MetastabError):
    pass


class DeltaNonempty(MetastabError):
    pass


class ReducibleKilledChain(Reducible):
    pass


class StateInsideSets(MetastabError):
    pass


class MeasureOffWell(MetastabError):
    pass


# spectral -------------------------------------------------------------------

class EigenFailure(NumericalError):
    pass


class BadSplit(MetastabError):
    pass


class GridTooCoarse(NumericalError):
    pass


class NonzeroMean(MetastabError):
    pass


# metastability --------------------------------------------------------------

class FamilyTooSmall(MetastabError):
    pass


class IncompatiblePartitions(MetastabError):
    pass


class DivergentRates(MetastabError):
    pass


class BadPartition(MetastabError):
    pass


# simulate -------------------------------------------------------------------

class Unreachable(MetastabError):
    pass


# models ---------------------------------------------------------------------

class DegenerateWell(MetastabError):
    pass


class StateSpaceTooLarge(MetastabError):
    pass


class DimensionUnsupported(MetastabError):
    pass


class DisconnectedDraw(MetastabError):
    pass


# cli ------------------------------------------------------------------------

class ParseError(MetastabError):
    pass


class UnknownSuite(MetastabError):
    pass
