from typing import Optional

from eliot import add_destinations
from rich.logging import RichHandler

from lrspatial.logger import logger, set_config, set_level

_eliot_forwarding = False


def forward_eliot_to_logger() -> None:
    """Route eliot action messages into the lrspatial logger (once)."""
    global _eliot_forwarding
    if not _eliot_forwarding:
        add_destinations(logger.debug)
        _eliot_forwarding = True


def configure_logging(logging_config=None, log_level=None, console: bool = False):
    set_config(logging_config)
    set_level(log_level)
    if console and not any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.addHandler(RichHandler(show_path=False))


def log_level_for(verbose: int) -> Optional[int]:
    """Map a count of -v flags to a logging level."""
    import logging

    if verbose <= 0:
        return None
    if verbose == 1:
        return logging.INFO
    return logging.DEBUG
