"""Errors raised by loopgraph and error values for loop measurements."""
from __future__ import annotations

# std
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, TypeVar, Union


class ErrorKind(str, Enum):
    """Kinds of errors."""

    # Geometry
    AngleNearPi = "AngleNearPi"
    # Point clouds and files
    InvalidLeaf = "InvalidLeaf"
    ParseError = "ParseError"
    UnsupportedFieldLayout = "UnsupportedFieldLayout"
    FormatMismatch = "FormatMismatch"
    CountMismatch = "CountMismatch"
    IoError = "IoError"
    # Place recognition
    ShapeMismatch = "ShapeMismatch"
    DuplicateId = "DuplicateId"
    UnknownId = "UnknownId"
    # Registration
    EmptyCloud = "EmptyCloud"
    NoCorrespondences = "NoCorrespondences"
    LoopRejected = "LoopRejected"
    # Pose graph
    UnknownIndex = "UnknownIndex"
    InvalidPair = "InvalidPair"
    GaugeUnfixed = "GaugeUnfixed"
    LinearSolveFailure = "LinearSolveFailure"
    # Parameters and configuration
    InvalidParameter = "InvalidParameter"


INPUT_ERRORS = frozenset(
    [
        ErrorKind.InvalidLeaf,
        ErrorKind.ParseError,
        ErrorKind.UnsupportedFieldLayout,
        ErrorKind.FormatMismatch,
        ErrorKind.CountMismatch,
        ErrorKind.IoError,
        ErrorKind.InvalidParameter,
    ]
)
"""Error kinds caused by bad user input rather than by loopgraph itself."""


class LoopGraphError(Exception):
    """Exception raised by every loopgraph operation."""

    def __init__(
        self: LoopGraphError, kind: ErrorKind, details: Optional[str] = None
    ) -> None:
        """Create a new error of a given kind."""
        self.kind = kind
        self.details = details
        if details is None:
            super().__init__(kind.value)
        else:
            super().__init__(f"{kind.value}: {details}")


@dataclass
class Error:
    """An Error value, for outcomes that are logged instead of raised."""

    kind: ErrorKind
    source: Optional[str] = None
    details: Optional[str] = None

    @classmethod
    def from_exception(
        cls: type[Error], exc: LoopGraphError, source: Optional[str] = None
    ) -> Error:
        """Turn a raised LoopGraphError into an Error value."""
        return cls(exc.kind, source=source, details=exc.details)

    def throw(self: Error) -> None:
        """Raise this Error as a LoopGraphError."""
        raise LoopGraphError(self.kind, self.details)


# A simple mypy result type
T = TypeVar("T")
Result = Union[Error, T]
"""Result contains either a value or an `Error` instance.

`Result[T]` is a type hint that corresponds to `Union[T, Error]`. This is only
an abstraction: at runtime, a `Result[T]` is just `T` or `Error`. That is,
`Result` has no runtime representation.

"""


T1 = TypeVar("T1")
T2 = TypeVar("T2")


def match(
    result: Result[T], some: Callable[[T], T1], none: Callable[[Error], T2]
) -> Union[T1, T2]:
    """Pattern matching on Results."""
    if isinstance(result, Error):
        return none(result)
    else:
        return some(result)
