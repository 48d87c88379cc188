"""Logging configuration: loguru sinks, run tagging, numerical warnings routed into the log."""

from __future__ import annotations

import sys
import warnings
from typing import Any

import numpy as np
from loguru import logger

DEFAULT_FORMAT = "{time:HH:mm:ss} | {level:<7} | {extra[run]} | {message}"
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level:<7} | {extra[run]} | {message}"

# Remove loguru defaults; add a fallback sink so logging works before configure().
logger.remove()
logger.configure(extra={"run": "-"})
_fallback_id: int | None = logger.add(sys.stderr, level="INFO", format=DEFAULT_FORMAT)


def _show_warning(message: Any, category: type[Warning], filename: str, lineno: int, file: Any = None, line: Any = None) -> None:
    logger.warning(f"{category.__name__}: {message} ({filename}:{lineno})")


def _numpy_error(kind: str, flag: int) -> None:
    logger.warning(f"numpy floating point error: {kind} (flag {flag})")


def configure(
    level: str = "INFO",
    fmt: str = "",
    json_format: bool = False,
    file: str = "",
    rotation: str = "10 MB",
    retention: str = "7 days",
    run: str = "",
) -> None:
    """Reconfigure logging sinks. Called once per run from the CLI.

    Idempotent: removes all previous sinks and adds fresh ones. Every record is
    tagged with `run`; Python warnings (scipy quadrature, numpy) and numpy
    divide / overflow / invalid errors are logged at WARNING instead of printed.
    """
    global _fallback_id
    logger.remove()
    _fallback_id = None
    logger.configure(extra={"run": run or "-"})

    if json_format:
        logger.add(sys.stderr, level=level, serialize=True)
    else:
        logger.add(sys.stderr, level=level, format=fmt or DEFAULT_FORMAT)

    if file:
        kw: dict[str, Any] = {"level": level, "rotation": rotation, "retention": retention}
        if json_format:
            kw["serialize"] = True
        else:
            kw["format"] = fmt or FILE_FORMAT
        logger.add(file, **kw)

    warnings.showwarning = _show_warning
    np.seterrcall(_numpy_error)
    np.seterr(divide="call", over="call", invalid="call", under="ignore")
