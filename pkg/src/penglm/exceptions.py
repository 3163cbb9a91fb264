"""Exception types raised by penglm."""


class PenGLMError(Exception):
    """Base class for all library errors."""


class InvalidInputError(PenGLMError, ValueError):
    """Malformed data, shapes or parameter values."""


class DomainError(InvalidInputError):
    """Response values outside the support of the loss."""


class UnsupportedError(PenGLMError):
    """A loss/penalty/solver combination that is not implemented."""


class UnboundedInterceptError(PenGLMError):
    """The intercept-only problem has no finite minimizer."""


class DivergenceError(PenGLMError, ArithmeticError):
    """The solver produced a non-finite objective."""


class InfeasibleError(PenGLMError, ValueError):
    """A constraint set is empty."""
