import logging

from src.errors import (
    ConvergenceError,
    DataIOError,
    InfeasibleSetError,
    InvalidConfigError,
    MetricPreconditionError,
    code_for,
)
from src.logger_config import run_context, setup_logging


def test_run_context_stamps_records(caplog):
    setup_logging(logging.INFO)
    with caplog.at_level(logging.INFO):
        with run_context("simulate-7"):
            logging.getLogger("cli").info("inside")
        logging.getLogger("cli").info("outside")
    inside, outside = caplog.records[-2:]
    assert inside.run_id == "simulate-7"
    assert getattr(outside, "run_id", "-") == "-"


def test_exit_codes():
    assert InvalidConfigError("x").exit_code == 2
    assert DataIOError("x").exit_code == 3
    assert ConvergenceError("x", objective=1.5, iterations=10).exit_code == 4
    assert InfeasibleSetError("x").exit_code == 4
    assert MetricPreconditionError("x").exit_code == 5
    assert code_for(3) == "IO_FAILURE"
    assert code_for(9) == "EXIT_9"
