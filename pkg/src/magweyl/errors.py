"""Exception hierarchy shared by all modules."""


class MagWeylError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(MagWeylError):
    pass


class NotClosed(MagWeylError):
    pass


class GridMismatch(MagWeylError):
    pass


class GridTooCoarse(MagWeylError):
    pass


class EvaluationOverflow(MagWeylError):
    pass


class OffLattice(MagWeylError):
    pass


class InconsistentPair(MagWeylError):
    pass


class NonDecaying(MagWeylError):
    pass


class DerivativeOrderExceeded(MagWeylError):
    pass


class NotInvertible(MagWeylError):
    pass


class SearchFailed(MagWeylError):
    pass


class SpectrumHit(MagWeylError):
    pass


class MeshTooCoarse(MagWeylError):
    pass


class NotPositive(MagWeylError):
    pass


class NonConvergence(MagWeylError):
    pass


class HypothesisViolated(MagWeylError):
    pass


class ProfileMismatch(MagWeylError):
    pass


class ConfigError(MagWeylError):
    pass


class ComputeError(MagWeylError):
    def __init__(self, module, operation, cause):
        super().__init__(f"{module}.{operation}: {cause}")
        self.module = module
        self.operation = operation
        self.cause = cause
