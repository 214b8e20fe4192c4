"""Exception hierarchy shared across the package."""


class RmdnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RmdnError, ValueError):
    pass


class ParameterError(RmdnError, ValueError):
    pass


class SingularityError(RmdnError, ArithmeticError):
    """A matrix that must be positive definite (or full rank) is not."""


class InstabilityError(RmdnError, ArithmeticError):
    """An inverse update would divide by a (near) zero quantity."""


class StateError(RmdnError, RuntimeError):
    pass


class FormatError(RmdnError, ValueError):
    """Malformed container file. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(RmdnError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, stage: int | None = None, epoch: int | None = None):
        super().__init__(f"{message} (stage={stage}, epoch={epoch})")
        self.stage = stage
        self.epoch = epoch
