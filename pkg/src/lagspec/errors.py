"""Exception hierarchy shared by all modules."""


class LagspecError(Exception):
    """Base class for every error raised by the package."""


class StructureError(LagspecError):
    """A Hamiltonian tree, chain complex or mesh is malformed."""


class PreconditionError(LagspecError):
    """An operation was called on inputs that violate its precondition."""


class IntegratorError(LagspecError):
    """The flow integrator could not converge even at the smallest allowed step."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResolutionError(LagspecError):
    """A sampled object is too coarse to resolve a fold, caustic or crossing."""


class DegenerateError(LagspecError):
    """Input is non-generic (tangential intersections, triple ties, A1xA1 points)."""


class UnsupportedInputError(LagspecError):
    """Input lies outside the supported model (e.g. an immersed curve)."""
