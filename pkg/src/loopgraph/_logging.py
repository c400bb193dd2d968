"""Logging and log levels."""
# std
import sys

# external
import loguru

logger = loguru.logger
logger.remove()

_sinks: list = []


# Standard logger for errors etc
def set_level(level: str) -> None:
    """Set logging level."""
    log_format = (
        "<green>{time:YYYYMMDD} {time:HH:mm:ss.S}</green>|"
        + " <level>{level: <8}</level> |"
        + " <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan>"
        + " <level>{message}</level>"
    )
    # Per-keyframe records, bound with logger.bind(kf=id)
    keyframe_format = " kf:<green>{extra[kf]}</green> |" + " <level>{message}</level>"

    while _sinks:
        logger.remove(_sinks.pop())

    _sinks.append(
        logger.add(
            sys.stderr,
            format=log_format,
            level=level,
            filter=lambda record: "kf" not in record["extra"],
        )
    )
    _sinks.append(
        logger.add(
            sys.stderr,
            format=keyframe_format,
            filter=lambda record: "kf" in record["extra"],
            level=level,
            backtrace=False,
        )
    )


# Default level
set_level("INFO")
