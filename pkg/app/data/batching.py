"""
Padding, Masking and Batching

Answers are mapped to ids, truncated to the first L tokens and padded with
PAD. Batches may be produced on a background thread and handed to the
training thread over a bounded queue; all shuffling randomness is drawn by
whichever thread runs make_batches.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from app.data.text import tokenize
from app.data.vocabulary import PAD_ID, UNK_ID, Vocabulary
from app.schemas.grading import AnswerPair

logger = logging.getLogger(__name__)

ItemT = TypeVar("ItemT")


@dataclass
class Batch:
    """
    Integer-encoded mini-batch.

    Attributes:
        student_ids, reference_ids: [B, L] int64
        student_mask, reference_mask: [B, L] bool, True exactly where the id is not PAD
        labels: [B] int64 in {0, 1}
        pair_ids: Source pair ids, in batch order
    """

    student_ids: np.ndarray
    reference_ids: np.ndarray
    student_mask: np.ndarray
    reference_mask: np.ndarray
    labels: np.ndarray
    pair_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.student_ids.shape[1])


def pad_truncate(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Map tokens to ids (UNK for unknown), keep the first max_len, pad with PAD.

    An empty token list becomes a single UNK so every answer keeps one
    attendable position.

    Returns:
        (ids [max_len] int64, mask [max_len] bool)
    """
    ids = vocab.encode(tokens[:max_len]) if tokens else [UNK_ID]
    padded = np.full(max_len, PAD_ID, dtype=np.int64)
    padded[: len(ids)] = ids
    return padded, padded != PAD_ID


def encode_pairs(pairs: Sequence[AnswerPair], vocab: Vocabulary, max_len: int) -> Batch:
    """Encode pairs into one batch, in the given order."""
    size = len(pairs)
    student_ids = np.full((size, max_len), PAD_ID, dtype=np.int64)
    reference_ids = np.full((size, max_len), PAD_ID, dtype=np.int64)
    for row, pair in enumerate(pairs):
        student_ids[row], _ = pad_truncate(tokenize(pair.student_text), vocab, max_len)
        reference_ids[row], _ = pad_truncate(tokenize(pair.reference_text), vocab, max_len)
    return Batch(
        student_ids=student_ids,
        reference_ids=reference_ids,
        student_mask=student_ids != PAD_ID,
        reference_mask=reference_ids != PAD_ID,
        labels=np.array([pair.label for pair in pairs], dtype=np.int64),
        pair_ids=[pair.id for pair in pairs],
    )


def make_batches(
    pairs: Sequence[AnswerPair],
    vocab: Vocabulary,
    max_len: int,
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = True,
) -> Iterator[Batch]:
    """
    Yield batches covering every pair exactly once; the last batch may be smaller.

    Args:
        pairs: Dataset
        vocab: Vocabulary for id lookup
        max_len: Padded length L
        batch_size: B >= 1
        rng: Shuffling generator (required when shuffle is set)
        shuffle: Permute pair order with rng

    Raises:
        ValueError: If batch_size < 1 or shuffle is requested without a generator
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(pairs))
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs a random generator")
        order = rng.permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        yield encode_pairs([pairs[i] for i in order[start : start + batch_size]], vocab, max_len)


_DONE = object()


class _ProducerFailure:
    def __init__(self, error: BaseException):
        self.error = error


def prefetch(items: Iterable[ItemT], maxsize: int = 4) -> Iterator[ItemT]:
    """
    Run `items` on a producer thread and yield them through a bounded queue.

    The producer's exceptions are re-raised on the consuming thread. With
    maxsize 0 the iterable is consumed inline.
    """
    if maxsize <= 0:
        yield from items
        return

    buffer: "queue.Queue" = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def offer(value: object) -> bool:
        """Put value unless the consumer has gone; False once stopped."""
        while not stop.is_set():
            try:
                buffer.put(value, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for item in items:
                if not offer(item):
                    return
            offer(_DONE)
        except BaseException as exc:
            offer(_ProducerFailure(exc))

    worker = threading.Thread(target=produce, name="batch-producer", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                break
            if isinstance(item, _ProducerFailure):
                raise item.error
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
