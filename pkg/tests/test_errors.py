"""Tests of error handling."""
# external
import pytest

# loopgraph
from loopgraph.errors import (
    Error,
    ErrorKind,
    INPUT_ERRORS,
    LoopGraphError,
    match,
)


def test_error_message() -> None:
    """Test that the kind leads the message."""
    e = LoopGraphError(ErrorKind.ParseError, "poses.txt:3: bad line")
    assert str(e) == "ParseError: poses.txt:3: bad line"
    assert e.kind == ErrorKind.ParseError
    assert str(LoopGraphError(ErrorKind.GaugeUnfixed)) == "GaugeUnfixed"


def test_error_value() -> None:
    """Test conversions between exceptions and error values."""
    exc = LoopGraphError(ErrorKind.NoCorrespondences, "nothing within 1 m")
    err = Error.from_exception(exc, "3-40")
    assert err.kind == ErrorKind.NoCorrespondences
    assert err.source == "3-40"
    assert err.details == "nothing within 1 m"

    with pytest.raises(LoopGraphError) as e:
        err.throw()
    assert e.value.kind == ErrorKind.NoCorrespondences


def test_match() -> None:
    """Test pattern matching on results."""
    assert match(2, lambda x: x + 1, lambda e: -1) == 3
    assert match(Error(ErrorKind.LoopRejected), lambda x: x, lambda e: e.kind) == (
        ErrorKind.LoopRejected
    )


def test_input_errors() -> None:
    """Test which kinds count as bad input."""
    assert ErrorKind.ParseError in INPUT_ERRORS
    assert ErrorKind.InvalidParameter in INPUT_ERRORS
    assert ErrorKind.LinearSolveFailure not in INPUT_ERRORS
    assert ErrorKind.AngleNearPi not in INPUT_ERRORS
