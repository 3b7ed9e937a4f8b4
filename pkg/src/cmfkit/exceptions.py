"""Exception types raised by cmfkit."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericalFailureError(ArithmeticError):
    """A solver produced a non-finite quantity.

    Attributes
    ----------
    iteration : int
        Index (0-based) of the iteration at which the failure was detected.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
