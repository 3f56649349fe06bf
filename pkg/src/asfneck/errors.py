"""Exception types shared across the package."""


class DimensionError(ValueError):
    """A tensor extent does not satisfy an operation's shape contract."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ConfigError(ValueError):
    """A configuration document violates the schema.

    ``path`` is the JSON path of the offending value (``$.ssff.channels``).
    """

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class DegenerateBoxError(ValueError):
    """The enclosing box of a pair has zero width or height."""


class ImageError(OSError):
    """An input image cannot be decoded into an 8-bit 1- or 3-channel array."""
