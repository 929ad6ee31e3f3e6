"""Exception taxonomy shared across the package."""


class TileSRError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(TileSRError):
    """Shape, divisibility, bounds, or coverage violation."""


class ProtocolError(TileSRError):
    """Malformed or unexpected bytes on the denoiser wire protocol."""


class BackendError(TileSRError):
    """A denoiser or tag-extractor backend failed or is unavailable."""
