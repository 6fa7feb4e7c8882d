"""
Exception hierarchy for votecraft.

Every error derives from :class:`VotecraftError` and from the builtin exception a
caller would naturally expect (``ValueError`` for bad inputs, ``RuntimeError`` for
lifecycle problems, ``OSError`` for files), so ``except ValueError`` keeps working.
"""

from typing import Optional


class VotecraftError(Exception):
    """Base class for all votecraft errors."""


class ShapeError(VotecraftError, ValueError):
    """Array shapes or sequence lengths do not agree."""


class InvalidInput(VotecraftError, ValueError):
    """An argument is outside what the operation accepts."""


class InvalidMatrix(InvalidInput):
    """A matrix holds non-finite entries."""


class DomainError(InvalidInput):
    """A loss argument lies outside its mathematical domain."""


class InvalidModel(InvalidInput):
    """An object model is empty or malformed."""


class DegenerateProblem(VotecraftError, ValueError):
    """
    A voting or clustering problem has no usable support.

    Parameters
    ----------
    message : str
        Human readable description.
    keypoint_index : int, optional
        Row of the vector field the failure belongs to, when known.
    """

    def __init__(self, message: str, keypoint_index: Optional[int] = None):
        if keypoint_index is not None:
            message = f"keypoint {keypoint_index}: {message}"
        super().__init__(message)
        self.keypoint_index = keypoint_index


class TooFewCorrespondences(VotecraftError, ValueError):
    """Fewer than three correspondences were given to the rigid fit."""


class DegenerateGeometry(VotecraftError, ValueError):
    """Model keypoints are collinear (or coincident), the rotation is not unique."""


class DegenerateScene(VotecraftError, ValueError):
    """Scene generation left no observed points."""


class ConfigError(VotecraftError, ValueError):
    """A configuration value or file is invalid."""


class PipelineError(VotecraftError, RuntimeError):
    """A pipeline board was used out of lifecycle order."""


class ReportIoError(VotecraftError, OSError):
    """A report, config or model file could not be read or written."""
