"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError -> 2 (bad files, bad
config, bad parameters), everything else derived from PtaflowError -> 1.
"""


class PtaflowError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PtaflowError):
    """Malformed or inconsistent user input (files, config, parameters)."""


class ComputationError(PtaflowError):
    """A numeric procedure failed (e.g. rank deficiency)."""


class ConvergenceError(ComputationError):
    """An iterative fit did not reach its tolerance within max_iters."""

    def __init__(self, message: str, gradient_norm: float | None = None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
