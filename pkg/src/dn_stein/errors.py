"""Exception types shared by the library and the CLI."""

from typing import Optional


class DomainError(ValueError):
    """An input lies outside the domain of an operation."""


class BudgetError(DomainError):
    """An enumeration or dynamic program would exceed its size budget."""

    def __init__(self, message: str, required: int, budget: int):
        """Initialize with the required and allowed table sizes."""
        super().__init__(f"{message} (required {required}, budget {budget})")
        self.reason = message
        self.required = required
        self.budget = budget


class AccuracyError(RuntimeError):
    """A numerical routine stopped before reaching its tolerance."""

    def __init__(
        self,
        message: str,
        estimate: float,
        error_estimate: Optional[float] = None,
    ):
        """Initialize with the best estimate reached so far."""
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate


# CLI exit codes
EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_ACCURACY = 3


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, (AccuracyError, BudgetError)):
        return EXIT_ACCURACY
    if isinstance(error, ValueError):
        return EXIT_DOMAIN
    return 1
