"""Exception types raised across the package."""


class EquimeshError(Exception):
    """Base class for all package errors."""


class EmptyMesh(EquimeshError):
    pass


class ZeroNormal(EquimeshError):
    pass


class NotOrthogonal(EquimeshError):
    pass


class MissingAnnotation(EquimeshError):
    pass


class NoConvergence(EquimeshError):
    def __init__(self, iterations: int, message: str = ""):
        self.iterations = iterations
        super().__init__(message or f"eigensolver did not converge after {iterations} iterations")


class DegenerateSpectrum(EquimeshError):
    pass


class CacheVersionMismatch(EquimeshError):
    pass


class HashMismatch(EquimeshError):
    pass


class MissingCache(EquimeshError):
    pass


class DimensionMismatch(EquimeshError):
    pass


class ShapeMismatch(EquimeshError, ValueError):
    pass


class IndexOutOfRange(EquimeshError, IndexError):
    pass


class ConfigMismatch(EquimeshError):
    pass


class EmptyTargets(EquimeshError):
    pass


class MissingPart(EquimeshError, KeyError):
    pass


class NonFiniteGradient(EquimeshError):
    pass


class TooFewMeshes(EquimeshError):
    pass


class ParseError(EquimeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFormat(EquimeshError):
    pass


class LengthMismatch(EquimeshError):
    pass


class UnknownColor(EquimeshError):
    def __init__(self, triplets):
        self.triplets = sorted(set(map(tuple, triplets)))
        super().__init__(f"colours missing from palette: {self.triplets}")
