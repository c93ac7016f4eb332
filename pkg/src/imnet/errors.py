"""Exception hierarchy shared by every imnet module."""


class IMNetError(Exception):
    """Base class for all errors raised by imnet."""


class ValidationError(IMNetError, ValueError):
    """Bad input detected before any work is done (CLI exit code 1)."""


class ShapeError(ValidationError):
    """Operand shapes are incompatible.

    The message always names every offending shape.
    """

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        parts = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {parts}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(IMNetError, FloatingPointError):
    """An operation produced (or was handed) NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: non-finite values encountered")


class ConfigError(ValidationError):
    pass


class CheckpointError(ValidationError):
    pass


class DatasetError(ValidationError):
    pass


class PlacementError(IMNetError):
    """Synthetic forgery could not place a non-overlapping copy."""
