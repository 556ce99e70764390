"""Exception types shared across the package."""


class EvHandsError(Exception):
    """Base class for all package errors."""


class ValidationError(EvHandsError, ValueError):
    """Bad input, configuration or file contents (CLI exit code 2)."""


class UnsortedStreamError(ValidationError):
    def __init__(self, index: int):
        super().__init__(f"event stream not sorted by time at index {index}")
        self.index = index


class CoordinateError(ValidationError):
    def __init__(self, index: int, x: int, y: int, width: int, height: int):
        super().__init__(f"event {index} at pixel ({x}, {y}) outside {width}x{height} sensor")
        self.index = index


class BehindCameraError(ValidationError):
    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        super().__init__(f"points behind the camera (z <= 0) at indices {self.indices}")


class NumericAbort(EvHandsError, FloatingPointError):
    """Non-finite values appeared during training (CLI exit code 3)."""
