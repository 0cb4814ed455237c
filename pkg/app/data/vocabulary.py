"""
Vocabulary

Token <-> id maps with reserved ids 0 = PAD and 1 = UNK. Ids of ordinary
tokens follow (count desc, token asc), so the same corpus multiset always
produces the same vocabulary regardless of order.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from app.data.text import tokenize
from app.exceptions import DataError
from app.schemas.grading import AnswerPair

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
RESERVED = (PAD_TOKEN, UNK_TOKEN)


class Vocabulary:
    """Bijective token <-> id map over non-reserved tokens, PAD and UNK always present."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.id_to_token: List[str] = list(RESERVED)
        self.token_to_id: Dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for token in tokens:
            if token in self.token_to_id:
                raise DataError(f"duplicate vocabulary token '{token}'")
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.lookup(token) for token in tokens]

    def ordinary_tokens(self) -> List[str]:
        return self.id_to_token[len(RESERVED):]

    def save(self, path: Union[str, Path]) -> None:
        """One token per line; the line index is the id."""
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocabulary file not found: {path}")
        lines = path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[: len(RESERVED)] != list(RESERVED):
            raise DataError(f"{path}: first lines must be the reserved tokens {RESERVED}")
        return cls(lines[len(RESERVED):])


def build_vocab(corpus: Iterable[AnswerPair], min_count: int = 1) -> Vocabulary:
    """
    Collect tokens of both answers with count >= min_count.

    Args:
        corpus: Answer pairs (any iterable, consumed once)
        min_count: Minimum occurrences for a token to get its own id

    Returns:
        Vocabulary ordered by (count desc, token asc) after PAD and UNK
    """
    counts: Counter = Counter()
    for pair in corpus:
        counts.update(tokenize(pair.student_text))
        counts.update(tokenize(pair.reference_text))
    for reserved in RESERVED:
        counts.pop(reserved, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    logger.info(f"Vocabulary built: {len(kept)} tokens kept of {len(counts)} (min_count={min_count})")
    return Vocabulary(kept)
