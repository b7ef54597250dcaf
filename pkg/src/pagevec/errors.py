"""Exception hierarchy shared across the package.

Everything raised on purpose derives from PagevecError so callers (and the
CLI) can tell deliberate failures apart from plain bugs.
"""


class PagevecError(Exception):
    """Base class for all package-specific errors."""


class InvalidGeometry(PagevecError):
    """A bounding box or page rectangle is degenerate or cannot be clamped."""


class DegenerateVector(PagevecError):
    """A vector with (near-)zero norm reached a normalization step."""


class EmptyBag(PagevecError):
    """The synthetic encoder was handed an empty token bag."""


class AdapterFailure(PagevecError):
    """An embedding adapter could not produce a vector (remote error, missing entry)."""


class DimMismatch(PagevecError):
    """An adapter or index produced vectors of an unexpected dimensionality."""


class EmptyIndex(PagevecError):
    """Ranking was requested against an index with no documents."""


class GeometryMismatch(PagevecError):
    """Patch grid and layout regions disagree about the underlying page."""


class CorruptIndex(PagevecError):
    """A stored index failed magic, size, or checksum validation."""


class VersionMismatch(PagevecError):
    """A stored index uses a format version this build does not support."""


class MalformedRun(PagevecError):
    """A run file violates the rank/score layout contract."""


class VocabTooSmall(PagevecError):
    """The synthetic corpus generator needs more distinct tokens than given."""
