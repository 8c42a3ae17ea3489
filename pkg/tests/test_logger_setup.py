"""Tests for the shared logger configuration."""

import logging
from logging.handlers import RotatingFileHandler

import pytest

import logger_setup
from logger_setup import TqdmLoggingHandler, logger, resolve_level, setup_logging


@pytest.fixture(autouse=True)
def restore_logger():
    handlers, level = logger.handlers[:], logger.level
    yield
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        if handler not in handlers:
            handler.close()
    for handler in handlers:
        logger.addHandler(handler)
    logger.setLevel(level)


@pytest.mark.parametrize('value, expected', [
    ('debug', logging.DEBUG), ('WARNING', logging.WARNING), (logging.ERROR, logging.ERROR),
    (None, logging.INFO), ('chatty', logging.INFO),
])
def test_level_names_resolve_with_info_fallback(value, expected):
    assert resolve_level(value) == expected


def test_file_logging_creates_the_configured_path(tmp_path):
    log_file = tmp_path / 'nested' / 'run.log'
    setup_logging('INFO', log_file=str(log_file), log_to_console=False)
    logger.info("linker epoch 1")
    for handler in logger.handlers:
        handler.flush()
    assert [type(h) for h in logger.handlers] == [RotatingFileHandler]
    assert 'linker epoch 1' in log_file.read_text(encoding='utf-8')


def test_setup_replaces_handlers_instead_of_stacking():
    setup_logging('DEBUG', log_to_file=False)
    setup_logging('WARNING', log_to_file=False)
    assert len(logger.handlers) == 1
    assert isinstance(logger.handlers[0], TqdmLoggingHandler)
    assert logger.level == logging.WARNING


def test_console_handler_writes_through_tqdm(monkeypatch):
    written = []
    monkeypatch.setattr(logger_setup.tqdm, 'write', lambda message, file=None: written.append(message))
    setup_logging('INFO', log_to_file=False)
    logger.warning("no candidates for M7")
    assert len(written) == 1
    assert written[0].endswith('no candidates for M7')
    assert ' - WARNING - ' in written[0]
