import logging

import pytest

from csrobust.utils.logger import log_stage, resolve_level, setup_logger


def test_env_level_wins_over_argument(monkeypatch):
    monkeypatch.setenv("CSROBUST_LOG", "warning")
    assert resolve_level("DEBUG") == logging.WARNING

    monkeypatch.delenv("CSROBUST_LOG")
    assert resolve_level("debug") == logging.DEBUG
    assert resolve_level("loud") == logging.INFO


def test_file_handler_receives_records(tmp_path, monkeypatch):
    monkeypatch.delenv("CSROBUST_LOG", raising=False)
    log_file = tmp_path / "run.log"
    logger = setup_logger("csrobust.tests.file", str(log_file), "INFO", console=False)
    logger.info("hello %s", "volume")
    for handler in logger.handlers:
        handler.flush()

    assert "INFO - hello volume" in log_file.read_text(encoding="utf-8")
    # Re-running setup does not stack handlers.
    logger = setup_logger("csrobust.tests.file", str(log_file), "INFO", console=False)
    assert len(logger.handlers) == 1


class _ListHandler(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.records = []

    def emit(self, record):
        self.records.append(record)


def test_log_stage_reports_outcome():
    logger = logging.getLogger("csrobust.tests.stage")
    logger.setLevel(logging.INFO)
    handler = _ListHandler()
    logger.addHandler(handler)
    try:
        with log_stage(logger, "attack"):
            pass
        with pytest.raises(ValueError):
            with log_stage(logger, "shift"):
                raise ValueError("boom")
    finally:
        logger.removeHandler(handler)

    messages = [record.getMessage() for record in handler.records]
    assert messages[0] == "attack: started"
    assert messages[1].startswith("attack: finished in ")
    assert messages[-1].startswith("shift: failed after ")
