"""Exception hierarchy shared by all modules.

The CLI maps each class onto a distinct exit code, so library code should
raise the most specific class that applies.
"""


class PbStitchError(Exception):
    """Base class for all package errors."""


class ContractError(PbStitchError, ValueError):
    """A precondition on the inputs of an operation was violated."""


class StitchingError(PbStitchError):
    """Stitching cannot proceed, e.g. a side camera does not overlap the center."""


class RenderError(PbStitchError):
    """The synthetic renderer was asked for an impossible view."""


class DataIOError(PbStitchError, OSError):
    """Reading or writing a file failed."""


class FormatError(DataIOError):
    """A binary or image file is malformed."""


class ParseError(DataIOError):
    """A JSON document violates its schema.

    ``field_path`` names the offending location, e.g. ``cameras.left.rotation``.
    """

    def __init__(self, message, field_path=""):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)
