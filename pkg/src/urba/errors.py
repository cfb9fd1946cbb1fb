"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so tool dispatch and
the HTTP layer can surface failures uniformly as ``{code, message}``.
"""

from __future__ import annotations


class UrbaError(Exception):
    """Base error with a stable machine-readable code."""

    code = "error"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    @property
    def message(self) -> str:
        return str(self)


class InvalidArgument(UrbaError):
    code = "invalid-argument"


class MissingFile(UrbaError):
    code = "missing-file"


class UnsupportedFormat(UrbaError):
    code = "unsupported-format"


class CorruptHeader(UrbaError):
    code = "corrupt-header"


class BoundsError(UrbaError):
    code = "bounds"


class PayloadTooLarge(UrbaError):
    code = "payload-too-large"


class BackendUnavailable(UrbaError):
    """Transport-level failure that persisted through the retry policy."""

    code = "backend-unavailable"


class BackendError(UrbaError):
    """Protocol-level error reported by a backend (non-200 with a code)."""

    code = "backend-error"


class AbstractionFailed(UrbaError):
    code = "abstraction-failed"


class VersionMismatch(UrbaError):
    code = "version-mismatch"


class IndexCorrupt(UrbaError):
    code = "index-corrupt"


class EmbedInconsistent(UrbaError):
    code = "embed-inconsistent"


class DimMismatch(UrbaError):
    code = "dim-mismatch"


class ZeroNorm(UrbaError):
    code = "zero-norm"


class ToolCallError(UrbaError):
    """Tool-call text that failed to parse or validate.

    ``code`` is one of ``malformed-call``, ``unknown-tool``, ``bad-args``.
    The message is returned to the decision model verbatim.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message, code=code)


class ManifestError(UrbaError):
    code = "manifest"
