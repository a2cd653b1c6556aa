"""Exception hierarchy for the solver stack."""


class RestopError(Exception):
    """Base class for all library errors."""


class DomainError(RestopError, ValueError):
    """An input lies outside the domain of the model or function."""


class RegimeViolation(RestopError, ValueError):
    """Parameters satisfy neither the standard nor the r == mu1 regime."""


class GridMismatch(RestopError, ValueError):
    pass


class QuadratureOverflow(RestopError, ArithmeticError):
    pass


class NoBracket(RestopError, RuntimeError):
    pass


class NoConvergence(RestopError, RuntimeError):
    """An inner root search exhausted its iteration budget."""


class StructureViolation(RestopError, RuntimeError):
    """The two-boundary ansatz does not describe the computed iterate."""


class MaxIterations(RestopError, RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class CertificateFailure(RestopError, AssertionError):
    pass


class OrderingViolation(RestopError, AssertionError):
    pass


class DegenerateExercise(RestopError, RuntimeError):
    pass
