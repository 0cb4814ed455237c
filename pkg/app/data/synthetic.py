"""
Synthetic Answer-Pair Generator

Stands in for a real graded-answer corpus. Each reference answer mixes k
keyword concepts with filler words. A right student answer keeps at least
ceil(0.8k) of the reference's concepts (some written as synonyms, order
shuffled); a wrong one keeps fewer than ceil(0.4k) and may borrow another
reference's concepts instead. Labels are exactly balanced; noise_rate is the
chance that a pair's content contradicts its label.

Token shapes: keyword "k<ref>x<j>", synonym "k<ref>x<j>s<n>", filler "w<i>".
"""

import logging
import math
import re
from typing import List, Optional, Set, Tuple

import numpy as np

from app.data.text import tokenize
from app.exceptions import ConfigError
from app.schemas.grading import AnswerPair, SyntheticSpec

logger = logging.getLogger(__name__)

_CONCEPT_PATTERN = re.compile(r"^k(\d+)x(\d+)(?:s\d+)?$")


def keyword_token(reference: int, index: int, synonym: int = 0) -> str:
    base = f"k{reference}x{index}"
    return base if synonym == 0 else f"{base}s{synonym}"


def concept_of(token: str) -> Optional[Tuple[int, int]]:
    """(reference, keyword index) for keyword and synonym tokens, None for filler."""
    match = _CONCEPT_PATTERN.match(token)
    return (int(match.group(1)), int(match.group(2))) if match else None


def concepts_in(text: str) -> Set[Tuple[int, int]]:
    return {c for c in (concept_of(t) for t in tokenize(text)) if c is not None}


def positive_threshold(k: int) -> int:
    return math.ceil(0.8 * k)


def negative_ceiling(k: int) -> int:
    return math.ceil(0.4 * k)


def keyword_overlap_label(pair: AnswerPair, keywords_per_reference: int) -> int:
    """Rule oracle: 1 when the student shares >= ceil(0.8k) concepts with the reference."""
    shared = concepts_in(pair.student_text) & concepts_in(pair.reference_text)
    return int(len(shared) >= positive_threshold(keywords_per_reference))


def _validate(spec: SyntheticSpec) -> None:
    if spec.keywords_per_reference > spec.reference_length:
        raise ConfigError(
            f"infeasible generator settings: keywords_per_reference={spec.keywords_per_reference} "
            f"exceeds reference_length={spec.reference_length}"
        )
    if spec.num_pairs % 2 != 0:
        raise ConfigError(f"num_pairs must be even for balanced labels, got {spec.num_pairs}")


class _Generator:
    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.k = spec.keywords_per_reference

    def filler(self, count: int) -> List[str]:
        return [f"w{i}" for i in self.rng.integers(0, self.spec.filler_vocab_size, size=max(count, 0))]

    def surface(self, reference: int, index: int) -> str:
        spec = self.spec
        if spec.synonyms_per_keyword > 0 and self.rng.random() < spec.synonym_rate:
            return keyword_token(reference, index, int(self.rng.integers(1, spec.synonyms_per_keyword + 1)))
        return keyword_token(reference, index)

    def keep(self, reference: int, count: int) -> List[str]:
        chosen = np.sort(self.rng.choice(self.k, size=count, replace=False))
        return [self.surface(reference, int(j)) for j in chosen]

    def shuffled(self, tokens: List[str]) -> str:
        return " ".join(tokens[i] for i in self.rng.permutation(len(tokens)))

    def reference_text(self, reference: int) -> str:
        tokens = [keyword_token(reference, j) for j in range(self.k)]
        return self.shuffled(tokens + self.filler(self.spec.reference_length - self.k))

    def right_answer(self, reference: int) -> str:
        count = int(self.rng.integers(positive_threshold(self.k), self.k + 1))
        tokens = self.keep(reference, count)
        return self.shuffled(tokens + self.filler(self.spec.reference_length - count))

    def wrong_answer(self, reference: int) -> str:
        count = int(self.rng.integers(0, negative_ceiling(self.k)))
        tokens = self.keep(reference, count)
        if self.spec.num_references > 1 and self.rng.random() < 0.5:
            other = int(self.rng.integers(0, self.spec.num_references - 1))
            other = other + 1 if other >= reference else other
            tokens += self.keep(other, int(self.rng.integers(positive_threshold(self.k), self.k + 1)))
        tokens += self.filler(self.spec.reference_length - len(tokens))
        if not tokens:
            tokens = self.filler(1)
        return self.shuffled(tokens)


def generate_synthetic_dataset(spec: SyntheticSpec, rng: np.random.Generator) -> List[AnswerPair]:
    """
    Generate spec.num_pairs balanced answer pairs.

    Args:
        spec: Generator settings
        rng: Source of all randomness (same seed -> identical pairs)

    Returns:
        Pairs in shuffled order, ids "syn-<index>" in generation order

    Raises:
        ConfigError: If k exceeds the reference length or num_pairs is odd
    """
    _validate(spec)
    gen = _Generator(spec, rng)
    references = [gen.reference_text(r) for r in range(spec.num_references)]

    half = spec.num_pairs // 2
    pairs = []
    for i in range(spec.num_pairs):
        label = 1 if i < half else 0
        reference = i % spec.num_references
        content = 1 - label if rng.random() < spec.noise_rate else label
        student = gen.right_answer(reference) if content == 1 else gen.wrong_answer(reference)
        pairs.append(
            AnswerPair(id=f"syn-{i:06d}", student_text=student, reference_text=references[reference], label=label)
        )

    order = rng.permutation(len(pairs))
    logger.info(
        f"Generated {len(pairs)} synthetic pairs over {spec.num_references} references "
        f"(k={spec.keywords_per_reference}, noise={spec.noise_rate})"
    )
    return [pairs[i] for i in order]
