"""Exception types shared by all modules."""


class CarnotError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(CarnotError, ValueError):
    pass


class StructureMismatch(InvalidArgument):
    """Two operands live in different groups."""


class InvalidStructure(CarnotError, ValueError):
    """Structure constants violate antisymmetry or do not span the second layer."""


class DegenerateDirection(CarnotError, ValueError):
    """A construction needs a nonzero horizontal direction and got (nearly) zero."""


class EvaluationError(CarnotError, ArithmeticError):
    """A scalar field returned a non-finite value."""
