"""Exception types shared across the package."""


class RoofgenError(Exception):
    """Base class for all package errors."""


class EmptyMesh(RoofgenError):
    """Operation requires a mesh with at least one vertex."""


class EmptyInput(RoofgenError):
    """Operation requires a non-empty input collection."""


class ParseError(RoofgenError):
    """Malformed OBJ/PGM input; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GrammarError(RoofgenError):
    """Token sequence violates the vertex/face sequence grammar."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"position {position}: {message}"
        super().__init__(message)
        self.position = position


class LimitExceeded(RoofgenError):
    """Sequence or face-count limit exceeded; carries the observed counts."""

    def __init__(self, message, observed=None, limit=None):
        super().__init__(message)
        self.observed = observed
        self.limit = limit


class SpecError(RoofgenError):
    """Invalid roof specification parameters."""


class InvalidPolygon(RoofgenError):
    """Polygon is degenerate or self-intersecting."""


class ShapeError(RoofgenError):
    """Tensor shapes incompatible for the requested operation."""


class MissingGrad(RoofgenError):
    """Optimizer step requested for a parameter without a gradient."""


class DegenerateSample(RoofgenError):
    """Sampled vertex model output has too few vertices to build faces."""


class IoError(RoofgenError):
    """Filesystem read/write failure with a path attached."""
