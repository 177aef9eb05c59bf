"""Exception hierarchy shared by all modules."""


class FockError(Exception):
    """Base class for errors raised by fockqpt."""


class ModelError(FockError, ValueError):
    """Invalid Hamiltonian or model input."""


class DisconnectedGraph(ModelError):
    pass


class IsolatedState(ModelError):
    pass


class DuplicateLink(ModelError):
    pass


class DiagonalKinetic(ModelError):
    pass


class EmptyCavity(ModelError):
    pass


class EmptyReservoir(ModelError):
    pass


class BadDistribution(ModelError):
    pass


class SizeLimit(ModelError):
    pass


class ModelFileError(ModelError):
    """Malformed or unsupported model file."""


class NoConvergence(FockError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class InvalidMode(FockError, ValueError):
    pass


class SignCollapse(FockError, RuntimeError):
    """Average sign too small for a meaningful estimate."""


class NonStoquasticRegion(FockError, ValueError):
    pass


class TruncationNotConverged(FockError, RuntimeError):
    pass
