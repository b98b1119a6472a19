class AbsNasError(Exception):
    """
    Base exception for all error types that absnas might raise.
    """


class SpaceDefinitionError(AbsNasError):
    pass


class InvalidChild(AbsNasError):
    """
    Raised when a child model has no path from the root node to the leaf node.
    """


class InvalidOperator(AbsNasError):
    pass


class SamplingExhausted(AbsNasError):
    """
    Raised when no valid child could be sampled within the retry budget,
    which usually means the search space is degenerate.
    """


class ShapeMismatch(AbsNasError):
    pass


class NumericalOverflow(AbsNasError):
    pass


class ZeroNormVector(AbsNasError):
    pass


class EmptyVector(ZeroNormVector):
    pass


class PathExplosion(AbsNasError):
    pass


class NoRemovableOperator(AbsNasError):
    pass


class CapExceeded(AbsNasError):
    pass


class EmptySubspace(AbsNasError):
    pass


class LengthMismatch(AbsNasError):
    pass


class MissingBenchmark(AbsNasError):
    pass


class SchemaError(AbsNasError):
    pass


class SpaceMismatch(AbsNasError):
    pass


class OutputExistsError(AbsNasError):
    pass


class ConfigurationError(AbsNasError):
    pass


class IoFailure(AbsNasError):
    pass


class TermInterrupt(AbsNasError):
    pass
