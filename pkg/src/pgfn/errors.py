"""Exception types raised across the package."""


class PGFNError(Exception):
    """Base class for all errors raised by pgfn."""


class IllegalAction(PGFNError, ValueError):
    pass


class NoParent(PGFNError, ValueError):
    pass


class NotTerminal(PGFNError, ValueError):
    pass


class InvalidTrajectory(PGFNError, ValueError):
    pass


class DeadEnd(PGFNError, RuntimeError):
    """A region mask removed every action available at a non-terminal state."""


class EmptySpace(PGFNError, ValueError):
    pass


class BadDistribution(PGFNError, ValueError):
    pass


class ShapeMismatch(PGFNError, ValueError):
    pass


class EmptyMask(PGFNError, ValueError):
    pass


class NonFinite(PGFNError, ArithmeticError):
    pass


class EmptyBatch(PGFNError, ValueError):
    pass


class DepthUnderflow(PGFNError, ValueError):
    pass


class BadSpec(PGFNError, ValueError):
    pass


class Exhausted(PGFNError, RuntimeError):
    pass


class MissingReward(PGFNError, KeyError):
    pass


class BudgetExceeded(PGFNError, RuntimeError):
    pass


class ParseError(PGFNError, ValueError):
    pass
