class PreconditionError(ValueError):
    """An operation was called with arguments outside its contract."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


class StageError(RuntimeError):
    """Raised by the runner; carries the name of the stage that failed."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
