"""Exception types raised across lanecast."""


class LanecastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LanecastError, ValueError):
    pass


class ParseError(LanecastError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergenceError(LanecastError, FloatingPointError):
    pass


class ModelFormatError(LanecastError):
    pass


class CorruptModelError(ModelFormatError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class NormalizerMismatchError(LanecastError):
    pass
