"""Event-camera two-hand pose pipeline: simulation, event clouds, hand model, losses and metrics."""

from .errors import EvHandsError, NumericAbort, ValidationError

__version__ = "0.1.0"

__all__ = ["EvHandsError", "NumericAbort", "ValidationError", "__version__"]
