"""Exception hierarchy shared by all dfo modules."""


class DFOError(Exception):
    """Base class for every error raised by this package."""


class AngleNearPi(DFOError):
    pass


class NonPositiveDepth(DFOError):
    pass


class PointBehindCamera(DFOError):
    pass


class InvalidLevel(DFOError):
    pass


class DegenerateChannel(DFOError):
    pass


class ShapeMismatch(DFOError):
    pass


class EmptyResidualSet(DFOError):
    pass


class SingularSystem(DFOError):
    pass


class NoValidPixels(DFOError):
    pass


class SceneBehindCamera(DFOError):
    pass


class MalformedLine(DFOError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class LengthMismatch(DFOError):
    pass


class EmptyMask(DFOError):
    pass


class ConfigError(DFOError):
    pass


class FormatError(DFOError):
    """Raised when a grid or image file cannot be parsed."""
