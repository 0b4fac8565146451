import logging
import os
from typing import Optional, Union

from rich.console import Console
from rich.logging import RichHandler

ROOT_LOGGER = "h2t"
ENV_VAR = "H2T_LOG"

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}


def get_logger(name: str) -> logging.Logger:
    """Return a logger below the package root logger"""
    if name == ROOT_LOGGER or name.startswith(ROOT_LOGGER + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def _resolve_level(level: Optional[Union[str, int]]) -> int:
    if isinstance(level, int):
        return level
    raw = level if level is not None else os.environ.get(ENV_VAR)
    if raw is None:
        return logging.INFO
    resolved = _LEVELS.get(raw.strip().upper())
    if resolved is None:
        logging.getLogger(ROOT_LOGGER).warning(
            "Unknown %s value %r, falling back to WARNING", ENV_VAR, raw
        )
        return logging.WARNING
    return resolved


def configure_logging(level: Optional[Union[str, int]] = None,
                      console: Optional[Console] = None) -> logging.Logger:
    """Install a single rich handler on the package root logger.

    The level comes from ``level`` when given, else from the ``H2T_LOG``
    environment variable, else INFO.
    """
    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)

    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(_resolve_level(level))
    root.propagate = False
    return root
