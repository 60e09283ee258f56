"""
Logging setup - Rich console handler on stderr
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

_HANDLER_NAME = "name_demand.rich"


def configure_logging(level: str = "INFO") -> logging.Logger:
    """Attach one RichHandler to the package logger (idempotent)"""
    logger = logging.getLogger("name_demand")
    logger.setLevel(level.upper())
    if not any(getattr(h, "name", None) == _HANDLER_NAME for h in logger.handlers):
        handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)
        handler.set_name(_HANDLER_NAME)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    return logger
