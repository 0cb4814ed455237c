"""Pydantic schemas for configuration, records and reports."""

from app.schemas.grading import (
    AnswerPair,
    EpochRecord,
    GradCheckEntry,
    GradCheckReport,
    GradeResult,
    MetricsRecord,
    ModelConfig,
    ScoredExample,
    SyntheticSpec,
    TrainingConfig,
    TrainReport,
)

__all__ = [
    "AnswerPair",
    "EpochRecord",
    "GradCheckEntry",
    "GradCheckReport",
    "GradeResult",
    "MetricsRecord",
    "ModelConfig",
    "ScoredExample",
    "SyntheticSpec",
    "TrainingConfig",
    "TrainReport",
]
