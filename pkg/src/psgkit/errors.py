"""Exception types shared across the package."""


class PSGError(ValueError):
    """Raised when an operation's precondition fails.

    ``code`` is a short stable identifier (``"canvas-mismatch"``,
    ``"empty-mask"``, ...) that callers and the CLI can switch on.
    """

    def __init__(self, code, message=""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)


class ParseError(PSGError):
    """A file could not be turned into domain objects.

    ``path`` names the offending element, e.g. ``images[3].segments[0].rle``,
    and ``line`` the 1-based line of the file when known.
    """

    def __init__(self, path, message, line=None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__("parse-error", f"{where}{path}: {message}")
