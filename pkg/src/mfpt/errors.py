"""Exception types raised by the solver stack."""


class MfptError(Exception):
    """Base class for all errors raised by this package."""


class TrapTooSmall(MfptError):
    pass


class StencilEscape(MfptError):
    """An interpolation or difference stencil left the computational band."""


class DimensionMismatch(MfptError):
    pass


class SingularSystem(MfptError):
    pass


class DomainNotInvariant(MfptError):
    """The rotating-frame reduction needs a rotation-invariant domain."""


class NoConvergence(MfptError):
    pass


class StabilityViolation(MfptError):
    pass


class NotConverged(MfptError):
    pass


class DomainError(MfptError, ValueError):
    """Argument outside the admissible range of a closed-form formula."""


class NoRootInBracket(MfptError):
    pass


class CoincidentPoints(MfptError, ValueError):
    pass


class ObjectiveFailure(MfptError):
    def __init__(self, parameter, cause):
        super().__init__(f"objective failed at parameter {parameter!r}: {cause}")
        self.parameter = parameter
        self.cause = cause


class ConfigError(MfptError, ValueError):
    pass


class SchemaMismatch(MfptError):
    pass
