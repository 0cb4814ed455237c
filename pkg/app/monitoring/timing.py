"""
Stage Timing

Measures named stages (epochs, evaluation passes, gradient checks) and logs
the ones that exceed the configured threshold on the performance logger.
"""

import logging
import time
from typing import Optional

from app.logging_config import PERFORMANCE_LOGGER

# Configure logger for slow stages
logger = logging.getLogger(PERFORMANCE_LOGGER)


class StageTimer:
    """
    Context manager that times one stage.

    Stages slower than slow_stage_threshold_ms are logged as warnings,
    everything else at debug level.
    """

    def __init__(self, stage: str, slow_stage_threshold_ms: Optional[float] = None):
        """
        Initialize the timer.

        Args:
            stage: Human-readable stage name, e.g. "epoch 3"
            slow_stage_threshold_ms: Warn above this duration (defaults to settings)
        """
        if slow_stage_threshold_ms is None:
            from app.config import settings

            slow_stage_threshold_ms = settings.SLOW_STAGE_THRESHOLD_MS
        self.stage = stage
        self.slow_stage_threshold_ms = slow_stage_threshold_ms
        self.duration_ms = 0.0
        self._start = 0.0

    @property
    def elapsed_s(self) -> float:
        return self.duration_ms / 1000.0

    def __enter__(self) -> "StageTimer":
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.duration_ms = (time.perf_counter() - self._start) * 1000

        if self.duration_ms > self.slow_stage_threshold_ms:
            logger.warning(
                f"Slow stage detected: {self.stage} took {self.duration_ms:.2f}ms "
                f"(threshold: {self.slow_stage_threshold_ms}ms)",
                extra={"stage": self.stage, "duration_ms": self.duration_ms},
            )
        else:
            logger.debug(f"{self.stage} completed in {self.duration_ms:.2f}ms")
