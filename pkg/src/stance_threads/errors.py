"""Exception hierarchy shared across the package."""


class StanceError(Exception):
    """Base class for all package errors."""


class InputError(StanceError, ValueError):
    """Raised for malformed or structurally invalid input data."""


class MalformedInput(InputError):
    pass


class OrphanTweet(InputError):
    pass


class MultipleRoots(InputError):
    pass


class CycleDetected(InputError):
    pass


class UnknownId(StanceError, KeyError):
    pass


class MissingResource(StanceError):
    pass


class DimensionMismatch(StanceError, ValueError):
    pass


ShapeMismatch = DimensionMismatch


class NegativeDelta(StanceError, ValueError):
    pass


class NonFiniteLikelihood(StanceError, ArithmeticError):
    pass


class EmptyHistory(StanceError, ValueError):
    pass


class OptimizationDiverged(StanceError, ArithmeticError):
    pass


class NonFiniteLoss(StanceError, ArithmeticError):
    pass


class UnlabelledNode(StanceError, ValueError):
    pass


class EmptyMask(StanceError, ValueError):
    pass


class ZeroCount(StanceError, ValueError):
    pass


class LengthMismatch(StanceError, ValueError):
    pass


class TooFewEvents(StanceError, ValueError):
    pass


class UnknownFeature(StanceError, KeyError):
    pass


class ConfigError(StanceError, ValueError):
    pass


class FoldFailure(StanceError):
    """Wraps an exception raised while processing one cross-validation fold."""

    def __init__(self, test_event, cause):
        self.test_event = test_event
        self.cause = cause
        super().__init__(f"fold {test_event!r} failed: {type(cause).__name__}: {cause}")
