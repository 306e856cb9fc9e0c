"""Exception hierarchy shared by all tokenroll modules."""


class TokenrollError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(TokenrollError, ValueError):
    pass


class NotSymmetric(TokenrollError, ValueError):
    pass


class NonConvergent(TokenrollError, ArithmeticError):
    pass


class IllConditioned(TokenrollError, ArithmeticError):
    pass


class BucketDrained(TokenrollError):
    """A transmission would take the bucket level below zero."""


class InvalidCombination(TokenrollError, ValueError):
    pass


class OutOfRange(TokenrollError, ValueError):
    pass


class PreconditionViolated(TokenrollError, ValueError):
    pass


class ConstraintViolated(TokenrollError):
    pass


class NotInTerminalRegion(TokenrollError):
    pass


class CertificationFailed(TokenrollError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class Infeasible(TokenrollError):
    """No transmission schedule admits a feasible solution."""


class InitialInfeasible(Infeasible):
    pass


class InternalFeasibilityLoss(TokenrollError):
    """Recursive feasibility was violated during a closed-loop run."""


class LengthMismatch(TokenrollError, ValueError):
    pass


class ConfigError(TokenrollError, ValueError):
    pass
