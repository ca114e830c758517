"""Exception hierarchy shared by every module.

The CLI maps ContractError to exit status 1 and NumericError to exit status 2.
"""


class HsvaeError(Exception):
    """Base class for all errors raised by the package."""


class ContractError(HsvaeError, ValueError):
    """A precondition, shape or configuration contract was violated."""


class DomainError(ContractError):
    """Argument outside the domain of a special function."""


class FrozenEncoderViolation(ContractError):
    """Encoder parameters changed while they were declared frozen."""


class NumericError(HsvaeError, ArithmeticError):
    """A computation produced a non-finite value."""


class NonFiniteError(NumericError):
    """Non-finite output from a named operation."""

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(message or f"non-finite value produced by op '{op}'")


class TrainingAborted(NumericError):
    """Training stopped after consecutive non-finite objectives."""
