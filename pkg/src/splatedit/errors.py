"""Exception hierarchy shared across the engine."""


class SplatEditError(Exception):
    """Base class for all engine errors."""


class FormatError(SplatEditError):
    """Malformed input file (PLY header, manifest schema, ...)."""


class ConsistencyError(SplatEditError):
    """Parallel per-Gaussian structures disagree (row counts, ids)."""


class ValidationError(SplatEditError):
    """Bad request/argument values (dimensions, ranges, unknown ids)."""


class GuidanceError(SplatEditError):
    """Guidance backend failed to produce a usable gradient."""


class GuidanceTransportError(GuidanceError):
    """Remote guidance transport failure (network, HTTP status, schema)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts
