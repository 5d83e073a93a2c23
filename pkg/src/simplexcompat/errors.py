"""Exception hierarchy.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class ValidationError(ValueError):
    """Bad input: wrong shapes, out-of-range parameters, malformed files."""


class CapacityError(ValidationError):
    """The simplex has no free prototype left between the two cursors."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class DivergenceError(NumericalError):
    def __init__(self, epoch, loss):
        super().__init__(f"loss became non-finite ({loss!r}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


def with_context(exc: BaseException, context: str) -> BaseException:
    """Prefix the message of ``exc`` in place (keeps its type) and return it for re-raising."""
    if exc.args:
        exc.args = (f"{context}: {exc.args[0]}",) + tuple(exc.args[1:])
    else:
        exc.args = (context,)
    return exc
