"""Exception types raised by the toolkit."""


class CbctMarError(Exception):
    """Base class for all toolkit errors."""


class SingularProjection(CbctMarError):
    pass


class GeometryMismatch(CbctMarError):
    pass


class GridMismatch(CbctMarError):
    pass


class OutOfGrid(CbctMarError):
    pass


class ToothNotFound(CbctMarError):
    pass


class ToothTooSmall(CbctMarError):
    pass


class EmptyDentition(CbctMarError):
    pass


class UnmappedLabel(CbctMarError):
    pass


class NonNormalizedSpectrum(CbctMarError):
    pass


class WindowOutOfRange(CbctMarError):
    pass


class AllTraceRow(CbctMarError):
    """A detector row is inside the metal trace on every view."""


class DegenerateSimplex(CbctMarError):
    pass


class TooFewPoints(CbctMarError):
    pass


class OpenSurface(CbctMarError):
    pass


class ZeroReference(CbctMarError):
    pass


class ConfigError(CbctMarError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateAxis(UserWarning):
    """Implant axis points coincide; a vertical axis is used instead."""


class ZeroNormal(UserWarning):
    """Incident face normals cancel at a vertex; the vertex is not moved."""
