"""Tokenization."""

import re
from typing import List

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> List[str]:
    """
    Lowercase and split into word runs and single punctuation marks.

    Examples:
        "The cat." -> ["the", "cat", "."]
        "A  B"     -> ["a", "b"]
    """
    return _TOKEN_PATTERN.findall(text.lower())
