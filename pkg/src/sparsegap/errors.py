"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class NumericError(ArithmeticError):
    """Non-finite values appeared in inputs or during an iterative solve."""


class DegenerateGeometry(InvalidArgument):
    """Toy-model geometry too close to a pole of the closed-form accuracy."""
