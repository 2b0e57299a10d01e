import logging
import os
import sys
from contextlib import contextmanager
from logging.handlers import TimedRotatingFileHandler

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] [run=%(run_id)s] %(message)s"
LOG_FILE_NAME = "adapt.log"


class _RunIdDefault(logging.Filter):
    """Gives records emitted outside run_context() a placeholder run id."""
    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run_id"):
            record.run_id = "-"
        return True


def setup_logging(level: int | str = logging.INFO, log_dir: str | None = None) -> None:
    """
    Structured logging to stderr + optional daily-rotated file.
    - stdout is left alone: commands print their results there.
    - The file handler rotates at midnight and keeps 7 days of history.
    - Format includes the run id injected by run_context().
    """
    root = logging.getLogger()
    if root.handlers:
        # Avoid double configuration (tests, repeated CLI calls in one process)
        root.setLevel(level)
        return

    root.setLevel(level)
    fmt = logging.Formatter(LOG_FORMAT)

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(fmt)
    console.addFilter(_RunIdDefault())
    root.addHandler(console)

    log_dir = log_dir or os.environ.get("ADAPT_LOG_DIR")
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = TimedRotatingFileHandler(
            os.path.join(log_dir, LOG_FILE_NAME), when="midnight", backupCount=7, encoding="utf-8"
        )
        file_handler.setFormatter(fmt)
        file_handler.addFilter(_RunIdDefault())
        root.addHandler(file_handler)


@contextmanager
def run_context(run_id: str):
    """Stamp every log record produced inside the block with ``run_id``."""
    old_factory = logging.getLogRecordFactory()

    def record_factory(*args, **kwargs):
        rec = old_factory(*args, **kwargs)
        rec.run_id = run_id
        return rec

    logging.setLogRecordFactory(record_factory)
    try:
        yield run_id
    finally:
        logging.setLogRecordFactory(old_factory)
