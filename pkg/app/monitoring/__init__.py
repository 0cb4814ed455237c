"""Monitoring helpers for the grader."""

from app.monitoring.timing import StageTimer

__all__ = ["StageTimer"]
