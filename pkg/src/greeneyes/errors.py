"""Exception types raised across the package."""


class GreenEyesError(Exception):
    """Base class for every error raised by greeneyes."""


class ShapeError(GreenEyesError, ValueError):
    pass


class NonFiniteError(GreenEyesError, ArithmeticError):
    """A NaN or Inf appeared at an operation boundary."""


class TapeError(GreenEyesError, RuntimeError):
    pass


class AnnotationError(GreenEyesError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class IngestError(GreenEyesError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(GreenEyesError, IOError):
    pass


class TrainingError(GreenEyesError, RuntimeError):
    pass


class DivisionByZeroError(GreenEyesError, ZeroDivisionError):
    pass
