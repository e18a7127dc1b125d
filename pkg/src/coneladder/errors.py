"""Exception hierarchy shared by all coneladder modules."""


class ConeLadderError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ConeLadderError):
    pass


class NegativeProbability(ConeLadderError):
    pass


class MassExceedsOne(ConeLadderError):
    pass


class EmptyWindow(ConeLadderError):
    pass


class OutOfWindow(ConeLadderError):
    pass


class WindowTooSmallForHorizon(ConeLadderError):
    pass


class SolverFailure(ConeLadderError):
    pass


class NegativeAEntry(ConeLadderError):
    pass


class RowSumExceedsOne(ConeLadderError):
    pass


class NotSuperharmonic(ConeLadderError):
    pass


class NotHarmonic(ConeLadderError):
    pass


class NonPositiveH(ConeLadderError):
    pass


class IterationDivergence(ConeLadderError):
    pass


class NoBoundary(ConeLadderError):
    """The sublevel set {R <= 1} has empty boundary apart from the origin."""


class NonConvergence(ConeLadderError):
    pass


class MassNotOne(ConeLadderError):
    pass


class ParseError(ConeLadderError):
    pass


class SchemaError(ConeLadderError):
    pass
