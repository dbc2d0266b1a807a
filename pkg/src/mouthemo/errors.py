"""Exception types shared across the package."""


class MouthEmoError(Exception):
    """Base class for every error raised by mouthemo."""


class ShapeError(MouthEmoError, ValueError):
    pass


class BoundsError(MouthEmoError, IndexError):
    pass


class ParameterError(MouthEmoError, ValueError):
    pass


class LabelError(MouthEmoError, ValueError):
    pass


class DataError(MouthEmoError, ValueError):
    pass


class FormatError(MouthEmoError, ValueError):
    """Malformed binary input (graymap files, checkpoints)."""


class CascadeImportError(MouthEmoError, ValueError):
    """Raised when a haarcascade XML document cannot be turned into a Cascade."""
