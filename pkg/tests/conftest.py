"""Shared fixtures for the grader test suite."""

import logging

import pytest

from app.logging_config import PERFORMANCE_LOGGER, TRAINING_LOGGER


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers installed by setup_logging so no test writes to another test's captured streams."""
    root = logging.getLogger()
    saved = list(root.handlers), root.level
    yield
    root.handlers[:] = saved[0]
    root.setLevel(saved[1])
    for name in (TRAINING_LOGGER, PERFORMANCE_LOGGER):
        named = logging.getLogger(name)
        for handler in named.handlers:
            handler.close()
        named.handlers.clear()
