"""Mouth-region emotion recognition: Haar cascades in front of small CNNs."""

from .errors import (
    BoundsError,
    CascadeImportError,
    DataError,
    FormatError,
    LabelError,
    MouthEmoError,
    ParameterError,
    ShapeError,
)
from .tensor import SeededRng

__version__ = "0.1.0"

__all__ = [
    "BoundsError",
    "CascadeImportError",
    "DataError",
    "FormatError",
    "LabelError",
    "MouthEmoError",
    "ParameterError",
    "SeededRng",
    "ShapeError",
]
