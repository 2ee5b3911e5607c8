class ValidationError(ValueError):
    """Bad argument values or inputs that violate a documented precondition."""


class ShapeError(ValidationError):
    """Array dimensions do not line up."""


class SingularLogError(ValidationError):
    """Matrix logarithm requested for a matrix with non-positive eigenvalues."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in the forward or backward pass."""
