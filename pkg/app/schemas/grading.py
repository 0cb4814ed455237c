"""
Pydantic schemas for configuration, data records and reports.

These schemas validate every value that crosses a file or command-line
boundary: model and training hyperparameters, generator settings, answer
pairs, and the metrics/report records written by training and evaluation.
"""

import math
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the grading network."""

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "examples": [
                {
                    "vocab_size": 1200,
                    "d_emb": 64,
                    "d_model": 64,
                    "head_count": 4,
                    "d_ffn": 256,
                    "max_len": 24,
                    "encoder_layers": 1,
                    "aggregation_layers": 1,
                    "pooling_dim": 64,
                    "dropout_rate": 0.0,
                    "share_encoders": True,
                    "seed": 13,
                }
            ]
        },
    )

    vocab_size: int = Field(1000, ge=2, description="Vocabulary size including PAD and UNK")
    d_emb: int = Field(64, ge=2, description="Word embedding width (even)")
    d_model: int = Field(64, ge=1, description="Encoder width used throughout the network")
    head_count: int = Field(4, ge=1, description="Attention heads per transformer block")
    d_ffn: int = Field(256, ge=1, description="Hidden width of transformer feed-forward layers")
    max_len: int = Field(24, ge=1, description="Shared padded length L of both answers")
    encoder_layers: int = Field(1, ge=1, description="Transformer blocks per answer encoder")
    aggregation_layers: int = Field(1, ge=1, description="Transformer blocks after inside aggregation")
    pooling_dim: int = Field(64, ge=1, description="Width d_att of the self-attention pooling layer")
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout rate (training only)")
    share_encoders: bool = Field(True, description="Encode student and reference with the same blocks")
    seed: int = Field(13, ge=0, description="Root seed for initialization, shuffling and dropout")

    @model_validator(mode="after")
    def check_dimensions(self) -> "ModelConfig":
        if self.d_model % self.head_count != 0:
            raise ValueError(f"d_model={self.d_model} must be divisible by head_count={self.head_count}")
        if self.d_emb % 2 != 0:
            raise ValueError(f"d_emb={self.d_emb} must be even for sinusoidal positions")
        return self


class TrainingConfig(BaseModel):
    """Optimizer and loop settings."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-3, ge=0.0, description="Adam step size")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(20, ge=0)
    patience: int = Field(5, ge=0, description="Epochs without validation AUC gain before stopping; 0 disables")
    clip_norm: float = Field(5.0, ge=0.0, description="Global gradient norm limit; 0 disables clipping")
    min_count: int = Field(1, ge=1, description="Minimum token count for the vocabulary")
    prefetch: int = Field(4, ge=0, description="Bounded queue size of the batch producer; 0 runs inline")


class SyntheticSpec(BaseModel):
    """Settings of the synthetic answer-pair generator."""

    model_config = ConfigDict(extra="forbid")

    num_pairs: int = Field(1000, ge=2, description="Total pairs (even, half positive)")
    num_references: int = Field(50, ge=1, description="Distinct reference answers")
    keywords_per_reference: int = Field(5, ge=1, description="Keyword concepts k per reference")
    reference_length: int = Field(12, ge=1, description="Tokens per reference answer")
    filler_vocab_size: int = Field(300, ge=1, description="Distinct non-keyword filler tokens")
    synonyms_per_keyword: int = Field(2, ge=0, description="Alternative surface forms per keyword")
    synonym_rate: float = Field(0.3, ge=0.0, le=1.0, description="Chance a kept keyword is replaced by a synonym")
    noise_rate: float = Field(0.0, ge=0.0, le=1.0, description="Chance a pair's content contradicts its label")


class AnswerPair(BaseModel):
    """One labeled example: a student answer graded against a reference answer."""

    id: str = Field(..., min_length=1, description="Pair identifier")
    student_text: str = Field(..., min_length=1, description="Student answer")
    reference_text: str = Field(..., min_length=1, description="Reference answer")
    label: Literal[0, 1] = Field(..., description="1 = right answer, 0 = wrong answer")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "id": "syn-000001",
                    "student_text": "plants use sunlight to make sugar",
                    "reference_text": "photosynthesis turns light energy into chemical energy",
                    "label": 1,
                }
            ]
        }
    }


class ScoredExample(BaseModel):
    """Model score P(right) with the true label."""

    score: float = Field(..., ge=0.0, le=1.0)
    label: Literal[0, 1]

    @field_validator("score")
    @classmethod
    def score_is_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("score must be finite")
        return value


class EpochRecord(BaseModel):
    """Metrics of one completed training epoch."""

    epoch: int = Field(..., ge=1)
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    val_auc: float
    wall_time_s: float = Field(..., ge=0.0)


class TrainReport(BaseModel):
    """Per-epoch history of a fit() run."""

    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = Field(None, description="Epoch whose parameters were retained (0 = initialization)")
    best_val_auc: Optional[float] = None
    stopped_early: bool = False


class MetricsRecord(BaseModel):
    """Held-out evaluation result."""

    dataset: str
    n: int = Field(..., ge=1)
    accuracy: float
    auc: float
    positive_rate: float = Field(..., ge=0.0, le=1.0, description="Fraction of label-1 pairs")
    mean_loss: float

    def to_line(self) -> str:
        """Machine-readable line: dataset, n, accuracy, auc (tab-separated)."""
        return f"{self.dataset}\t{self.n}\t{self.accuracy:.6f}\t{self.auc:.6f}"

    def describe(self) -> str:
        return (
            f"{self.dataset}: n={self.n} accuracy={self.accuracy:.4f} auc={self.auc:.4f} "
            f"positive_rate={self.positive_rate:.4f} loss={self.mean_loss:.4f}"
        )


class GradeResult(BaseModel):
    """Probability that a student answer is right, with its verdict."""

    p_right: float = Field(..., ge=0.0, le=1.0)
    verdict: Literal["right", "wrong"]

    def to_line(self) -> str:
        return f"p_right={self.p_right:.6f}\tverdict={self.verdict}"


class GradCheckEntry(BaseModel):
    """Max relative error against finite differences, or max |gradient| of a parameter that must stay still."""

    name: str
    max_error: float
    tolerance: float
    metric: Literal["relative", "absolute"] = "relative"

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


class GradCheckReport(BaseModel):
    entries: List[GradCheckEntry] = Field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)
