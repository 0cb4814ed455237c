"""
Pre-trained Word Vector Loader

Reads the public word-vector text format: one "token v1 ... vd" line per
word, single-space separated, all with the same d. An optional first line
"<count> <dim>" (word2vec header) is accepted and checked.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from app.data.vocabulary import PAD_ID, UNK_ID, Vocabulary
from app.exceptions import DataError, EmbeddingFormatError

logger = logging.getLogger(__name__)

INIT_RANGE = 0.1


@dataclass
class EmbeddingTable:
    """Embedding matrix [V x d_emb] and the fraction of ordinary tokens found in the file."""

    vectors: np.ndarray
    coverage: float


def _is_header(fields) -> bool:
    return len(fields) == 2 and all(f.isdigit() for f in fields)


def load_embeddings(
    path: Union[str, Path],
    vocab: Vocabulary,
    d_emb: int,
    rng: np.random.Generator,
) -> EmbeddingTable:
    """
    Build an embedding table for vocab from a word-vector text file.

    Rows of tokens present in the file equal the file values exactly; missing
    tokens and UNK are drawn from uniform(-0.1, 0.1); the PAD row is zero.

    Args:
        path: Word-vector text file (UTF-8)
        vocab: Vocabulary to fill
        d_emb: Expected vector width
        rng: Generator for rows not covered by the file

    Returns:
        EmbeddingTable with coverage over non-reserved tokens (0.0 for an empty vocabulary)

    Raises:
        DataError: If the file does not exist
        EmbeddingFormatError: On an unparseable line or inconsistent width (with line number)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")

    table = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(len(vocab), d_emb))
    table[PAD_ID] = 0.0
    found = set()

    with path.open(encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(" ")
            if line_number == 1 and _is_header(fields):
                if int(fields[1]) != d_emb:
                    raise EmbeddingFormatError(str(path), 1, f"header declares width {fields[1]}, expected {d_emb}")
                continue
            token, values = fields[0], fields[1:]
            if len(values) != d_emb:
                raise EmbeddingFormatError(str(path), line_number, f"expected {d_emb} values, found {len(values)}")
            try:
                vector = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(str(path), line_number, "non-numeric vector component") from None
            token_id = vocab.token_to_id.get(token)
            if token_id is None or token_id in (PAD_ID, UNK_ID):
                continue
            table[token_id] = vector
            found.add(token_id)

    ordinary = len(vocab) - 2
    coverage = len(found) / ordinary if ordinary > 0 else 0.0
    logger.info(f"Loaded embeddings from {path}: coverage {coverage:.3f} ({len(found)}/{ordinary})")
    return EmbeddingTable(vectors=table, coverage=coverage)
