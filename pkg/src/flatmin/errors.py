"""Shared exception types."""


class ContractViolationError(ValueError):
    """A caller broke a documented precondition (bad shape, bad range, bad config)."""


class NonFiniteError(FloatingPointError):
    """A NaN/Inf showed up in an input, a gradient, or an optimizer state.

    ``step`` carries the 1-based optimizer step at which the value went
    non-finite, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step
