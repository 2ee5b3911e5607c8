"""Spatial-temporal graph ODE networks for traffic flow forecasting."""

from stgode.errors import ShapeError, ValidationError

__version__ = "0.1.0"

__all__ = ["ShapeError", "ValidationError", "__version__"]
