"""Exception hierarchy shared by all modules."""


class GstError(Exception):
    """Base class for toolkit errors."""


class InputError(GstError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, preconditions)."""


class EmptyCloudError(InputError):
    pass


class DegenerateGeometryError(InputError):
    pass


class RangeError(InputError):
    pass


class FormatError(GstError):
    """A file on disk violates the documented format.

    ``path`` and ``offset`` (byte offset, or ``None`` when not applicable)
    locate the violation.
    """

    def __init__(self, path, message, offset=None):
        self.path = str(path)
        self.offset = offset
        self.message = message
        where = self.path if offset is None else f"{self.path}@{offset}"
        super().__init__(f"{where}: {message}")


class CotRequestError(GstError):
    """LLM transport failed after all retries."""


class CotValidationError(GstError):
    """LLM response does not satisfy the grounded-answer contract."""
