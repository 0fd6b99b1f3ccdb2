"""Exception types shared across the package."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value or a factorization failed."""


class InvalidStateError(RuntimeError):
    """An object was used in a state its contract does not allow."""


class TrainingDivergence(NumericalError):
    """The training loss became non-finite; the update was aborted."""

    def __init__(self, message, update_index=None):
        super().__init__(message)
        self.update_index = update_index
