"""Exception hierarchy shared by the compiler, models and harness."""


class RescnnError(Exception):
    """Base class for all library errors."""


class ShapeError(RescnnError, ValueError):
    """Dimension mismatch; ``axis`` names the offending axis."""

    def __init__(self, message, axis=None):
        super().__init__(message if axis is None else f"{message} (axis: {axis})")
        self.axis = axis


class DomainError(RescnnError, ValueError):
    """Out-of-domain input or violated scalar precondition."""


class CompilationError(RescnnError):
    pass


class ValidationError(RescnnError):
    """A model failed class-membership validation where compliance is required."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SchemaError(RescnnError, ValueError):
    """Malformed serialized document; ``path`` locates the bad node."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class TrainingError(RescnnError):
    pass
