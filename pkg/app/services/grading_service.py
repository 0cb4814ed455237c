"""
Grading Service

Scores student answers against reference answers with a trained checkpoint.
"""

import logging
from pathlib import Path
from typing import List, Sequence, Union

from app.core.tensor import no_grad
from app.data.batching import encode_pairs
from app.data.vocabulary import Vocabulary
from app.model.asag import RIGHT, ModelParams, model_forward
from app.schemas.grading import AnswerPair, GradeResult
from app.services.checkpoint import load_checkpoint_with_vocab
from app.services.evaluation import DECISION_THRESHOLD

logger = logging.getLogger(__name__)


def verdict_for(p_right: float, threshold: float = DECISION_THRESHOLD) -> str:
    return "right" if p_right >= threshold else "wrong"


class GradingService:
    """Inference over frozen parameters; safe to share between threads."""

    def __init__(self, params: ModelParams, vocab: Vocabulary):
        self.params = params
        self.vocab = vocab

    @classmethod
    def from_checkpoint(cls, checkpoint: Union[str, Path]) -> "GradingService":
        params, vocab = load_checkpoint_with_vocab(checkpoint)
        logger.info(f"Loaded grader from {checkpoint} (vocabulary of {len(vocab)} tokens)")
        return cls(params, vocab)

    def grade_pairs(self, pairs: Sequence[AnswerPair], batch_size: int = 64) -> List[GradeResult]:
        """P(right) and verdict for each pair, in order."""
        results: List[GradeResult] = []
        with no_grad():
            for start in range(0, len(pairs), batch_size):
                batch = encode_pairs(pairs[start : start + batch_size], self.vocab, self.params.config.max_len)
                probs = model_forward(self.params, batch).data
                for p_right in probs[:, RIGHT]:
                    results.append(GradeResult(p_right=float(p_right), verdict=verdict_for(float(p_right))))
        return results

    def grade(self, student_text: str, reference_text: str) -> GradeResult:
        """
        Grade one student answer.

        Empty or whitespace-only answers are graded as a single UNK token.
        """
        pair = AnswerPair.model_construct(id="grade", student_text=student_text, reference_text=reference_text, label=0)
        return self.grade_pairs([pair])[0]
