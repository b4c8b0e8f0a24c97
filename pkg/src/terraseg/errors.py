"""Exception hierarchy for the toolkit.

``TerrasegError`` is the root; ``ValidationFailure`` covers bad inputs
(CLI exit code 1, HTTP 400) while ``IoFailure`` covers filesystem and
codec-level problems (CLI exit code 2).
"""

from __future__ import annotations


class TerrasegError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class ValidationFailure(TerrasegError):
    """Input violates an operation's contract."""


class IoFailure(TerrasegError):
    """Input could not be read or written at all."""


# -- schema ----------------------------------------------------------------

class DuplicateRawValue(ValidationFailure):
    pass


class DuplicateIndex(ValidationFailure):
    pass


class NonPositiveWeight(ValidationFailure):
    pass


class MissingField(ValidationFailure):
    pass


# -- codecs ----------------------------------------------------------------

class UnknownRawValue(ValidationFailure):
    def __init__(self, value: int, coord: tuple[int, int]):
        super().__init__(f"raw mask value {value} at pixel (row={coord[0]}, col={coord[1]}) "
                         "is not in the class schema")
        self.value = value
        self.coord = coord


class NotGrayscale(ValidationFailure):
    pass


class CorruptPng(IoFailure):
    pass


class BadMagic(ValidationFailure):
    pass


class VersionUnsupported(ValidationFailure):
    pass


class ShapeOverflow(ValidationFailure):
    pass


class TruncatedPayload(ValidationFailure):
    pass


class NonFiniteValue(ValidationFailure):
    pass


class NormalizationViolation(ValidationFailure):
    pass


class DimensionMismatch(ValidationFailure):
    pass


# -- metrics ---------------------------------------------------------------

class IndexOutOfRange(ValidationFailure):
    pass


class EmptyAccumulator(ValidationFailure):
    pass


# -- loss ------------------------------------------------------------------

class AllPixelsIgnored(ValidationFailure):
    pass


class NoPresentClasses(ValidationFailure):
    pass


# -- augmentation ----------------------------------------------------------

class DegenerateWindow(ValidationFailure):
    pass


class ZeroStd(ValidationFailure):
    pass


# -- postprocess -----------------------------------------------------------

class NonFiniteInput(ValidationFailure):
    pass


class EmptyViewList(ValidationFailure):
    pass


class InvalidProbabilities(ValidationFailure):
    pass


class EmptySampleList(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class EmptyInput(ValidationFailure):
    pass


# -- costmap / planner -----------------------------------------------------

class SingularHomography(ValidationFailure):
    pass


class StartBlocked(ValidationFailure):
    pass


class GoalBlocked(ValidationFailure):
    pass


class NoPath(ValidationFailure):
    pass
