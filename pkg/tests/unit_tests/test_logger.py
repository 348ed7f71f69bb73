import logging
import logging.config


def test_logger_empty_init(mocker):
    log_config_spy = mocker.spy(logging.config, "dictConfig")
    from lrspatial.logger import logger

    assert logger.name == "lrspatial"
    # dictConfig is only called once a config has been set
    assert log_config_spy.call_count == 0


def test_logger_is_singleton():
    from lrspatial.logger import get_logger, logger

    logger_1 = get_logger()
    logger_2 = get_logger()
    assert logger == logger_1
    assert logger_1 == logger_2


def test_set_level(mocker):
    from lrspatial.logger import logger, logger_config, set_level

    set_level(logging.NOTSET)

    setLevel_spy = mocker.spy(logger, "setLevel")

    set_level(logging.WARNING)

    assert logger.level == logging.WARNING
    assert logger_config.level == logging.WARNING
    assert setLevel_spy.call_count == 1

    set_level(logging.NOTSET)


def test_set_config(mocker):
    log_config_spy = mocker.patch("logging.config.dictConfig")
    from lrspatial.logger import set_config

    set_config({"version": 1, "disable_existing_loggers": False})

    assert log_config_spy.call_count == 1


def test_set_scope():
    from lrspatial.logger import base_scope, get_scope_handler, logger_config, set_scope

    set_scope(base_scope)

    scope_handler = get_scope_handler()
    assert logger_config.scope == base_scope
    assert scope_handler.scope == base_scope

    set_scope("fit-1")

    assert logger_config.scope == "fit-1"
    assert scope_handler.scope == "fit-1"

    set_scope(base_scope)


def test_scope_handler():
    """Uses its own logger so records from other tests do not interfere."""
    from lrspatial.logger import ScopeHandler, all_scopes, base_scope

    test_logger = logging.getLogger("test_scope_handler")
    test_logger.setLevel(logging.INFO)
    new_handler = ScopeHandler()
    test_logger.addHandler(new_handler)

    test_logger.info("test log 1")
    new_handler.set_scope("fit-2")
    test_logger.warning("test log 2")

    base_logs = new_handler.get_logs(base_scope)
    assert [log.getMessage() for log in base_logs] == ["test log 1"]
    assert [log.getMessage() for log in new_handler.get_logs("fit-2")] == ["test log 2"]
    assert len(new_handler.get_logs(all_scopes)) == 2

    new_handler.clear("fit-2")
    assert new_handler.get_logs("fit-2") == []
    new_handler.clear()
    assert new_handler.get_logs(all_scopes) == []


def test_configure_logging_adds_console_handler_once():
    from rich.logging import RichHandler

    from lrspatial.logger import logger
    from lrspatial.logging_utils import configure_logging, log_level_for

    configure_logging(log_level=log_level_for(2), console=True)
    configure_logging(console=True)
    try:
        assert logger.level == logging.DEBUG
        assert sum(isinstance(h, RichHandler) for h in logger.handlers) == 1
    finally:
        for h in [h for h in logger.handlers if isinstance(h, RichHandler)]:
            logger.removeHandler(h)
        configure_logging(log_level=logging.NOTSET)

    assert log_level_for(0) is None
    assert log_level_for(1) == logging.INFO


def test_fit_scope_restores_the_previous_scope():
    from lrspatial.logger import base_scope, fit_scope, get_scope_handler, logger

    handler = get_scope_handler()
    handler.clear("fit-outer")
    with fit_scope("fit-outer"):
        logger.warning("outer")
        with fit_scope("fit-inner"):
            assert handler.scope == "fit-inner"
        assert handler.scope == "fit-outer"
    assert handler.scope == base_scope
    assert [r.getMessage() for r in handler.get_logs("fit-outer")] == ["outer"]


def test_scopes_are_per_thread():
    import threading

    from lrspatial.logger import ScopeHandler

    test_logger = logging.getLogger("test_scopes_are_per_thread")
    test_logger.setLevel(logging.INFO)
    handler = ScopeHandler()
    test_logger.addHandler(handler)

    def worker():
        handler.set_scope("fit-worker")
        test_logger.info("from worker")

    handler.set_scope("fit-main")
    thread = threading.Thread(target=worker)
    thread.start()
    thread.join()
    test_logger.info("from main")

    assert [r.getMessage() for r in handler.get_logs("fit-worker")] == ["from worker"]
    assert [r.getMessage() for r in handler.get_logs("fit-main")] == ["from main"]


def test_scope_keeps_only_recent_records():
    from lrspatial.logger import ScopeHandler

    test_logger = logging.getLogger("test_scope_keeps_only_recent_records")
    test_logger.setLevel(logging.INFO)
    handler = ScopeHandler(max_records=3)
    test_logger.addHandler(handler)

    for i in range(5):
        test_logger.info(f"record {i}")

    assert [r.getMessage() for r in handler.get_logs()] == ["record 2", "record 3", "record 4"]
