import logging
import logging.config
import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from logging import Handler, LogRecord
from typing import Deque, Dict, Iterator, List, Optional

name = "lrspatial"
base_scope = "base"
all_scopes = "all"

# Records kept per scope; a Monte Carlo run performs thousands of fits.
MAX_RECORDS_PER_SCOPE = 2_000


class ScopeHandler(Handler):
    """Keeps log records in memory, grouped by the scope that was active in
    the emitting thread.

    Each fit switches its thread to the fit's own scope, so concurrent
    bootstrap refits never write into each other's logs.
    """

    def __init__(
        self,
        level=logging.NOTSET,
        scope: str = base_scope,
        max_records: int = MAX_RECORDS_PER_SCOPE,
    ):
        super().__init__(level)
        self.default_scope = scope
        self.max_records = max_records
        self.scoped_logs: Dict[str, Deque[LogRecord]] = {}
        self._local = threading.local()
        self._records_lock = threading.Lock()

    @property
    def scope(self) -> str:
        return getattr(self._local, "scope", self.default_scope)

    def set_scope(self, scope: str = base_scope) -> None:
        self._local.scope = scope

    def emit(self, record: LogRecord) -> None:
        with self._records_lock:
            logs = self.scoped_logs.setdefault(self.scope, deque(maxlen=self.max_records))
            logs.append(record)

    def clear(self, scope: Optional[str] = None) -> None:
        with self._records_lock:
            if scope is None or scope == all_scopes:
                self.scoped_logs = {}
            else:
                self.scoped_logs.pop(scope, None)

    def get_logs(self, scope: Optional[str] = None) -> List[LogRecord]:
        scope = scope or self.scope
        with self._records_lock:
            if scope == all_scopes:
                return [r for logs in self.scoped_logs.values() for r in logs]
            return list(self.scoped_logs.get(scope, ()))


@dataclass
class LoggerConfig:
    config: Dict = field(default_factory=dict)
    level: int = logging.NOTSET
    scope: str = base_scope


_logger = logging.getLogger(name)
logger_config = LoggerConfig()


def get_scope_handler() -> ScopeHandler:
    for h in _logger.handlers:
        if isinstance(h, ScopeHandler):
            return h
    scope_handler = ScopeHandler(logger_config.level, logger_config.scope)
    _logger.addHandler(scope_handler)
    return scope_handler


def get_logger() -> logging.Logger:
    if logger_config.config:
        logging.config.dictConfig(logger_config.config)
    _logger.setLevel(logger_config.level)
    get_scope_handler()
    return _logger


def set_config(config: Optional[Dict] = None) -> None:
    if config is not None:
        logger_config.config = config
        logging.config.dictConfig(logger_config.config)


def set_level(level: Optional[int] = None) -> None:
    if level is not None:
        logger_config.level = level
        _logger.setLevel(level)


def set_scope(scope: str = base_scope) -> None:
    """Switch the calling thread's scope."""
    logger_config.scope = scope
    get_scope_handler().set_scope(scope)


@contextmanager
def fit_scope(scope: str) -> Iterator[str]:
    """Route the calling thread's records into ``scope`` for the duration of
    the block, then restore the previous scope."""
    scope_handler = get_scope_handler()
    previous = scope_handler.scope
    scope_handler.set_scope(scope)
    try:
        yield scope
    finally:
        scope_handler.set_scope(previous)


logger = get_logger()
