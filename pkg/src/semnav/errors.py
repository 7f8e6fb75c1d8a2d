"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class FormatError(EngineError):
    """Session directory or manifest does not conform to the session format."""


class ValidationError(EngineError):
    """Input data violates a structural invariant (shapes, ranges, indices)."""


class InvalidInputError(EngineError):
    """Operation called with arguments outside its contract."""


class NoScaleError(EngineError):
    """A frame had no valid pixels to estimate a depth scale from."""


class BlockScaleError(EngineError):
    """No frame in the block produced a usable scale."""


class InvalidScaleError(EngineError):
    """Scale factor must be strictly positive."""


class AlignmentError(EngineError):
    """Inter-block alignment could not be established (missing anchors)."""


class NoPlaneError(EngineError):
    """Plane estimation failed (degenerate or insufficient points)."""


class ReprojectionRequiredError(EngineError):
    """Grid was asked to ingest points under a plane it was not built for."""


class InvalidStartError(EngineError):
    """Path planning start cell is not traversable and cannot be snapped."""


class ConsistencyError(EngineError):
    """Internal state violated a cross-structure invariant."""
