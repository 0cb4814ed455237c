"""
Dataset Files

UTF-8, LF-terminated lines, one answer pair per line, four tab-separated
fields: id, label, student_text, reference_text. Backslash, tab, newline and
carriage return inside fields are written as \\\\, \\t, \\n and \\r.
"""

import logging
import re
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import ValidationError

from app.exceptions import DataError, DatasetFormatError
from app.schemas.grading import AnswerPair

logger = logging.getLogger(__name__)

FIELD_COUNT = 4

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}
_ESCAPE_PATTERN = re.compile(r"[\\\t\n\r]")
_UNESCAPE_PATTERN = re.compile(r"\\(.?)")


def escape_field(text: str) -> str:
    return _ESCAPE_PATTERN.sub(lambda m: _ESCAPES[m.group(0)], text)


def unescape_field(text: str) -> str:
    """
    Reverse escape_field.

    Raises:
        ValueError: On an unknown or dangling escape sequence
    """

    def replace(match: re.Match) -> str:
        code = match.group(1)
        if code not in _UNESCAPES:
            raise ValueError(f"invalid escape sequence '\\{code}'")
        return _UNESCAPES[code]

    return _UNESCAPE_PATTERN.sub(replace, text)


def format_pair(pair: AnswerPair) -> str:
    return "\t".join(
        [escape_field(pair.id), str(pair.label), escape_field(pair.student_text), escape_field(pair.reference_text)]
    )


def parse_line(line: str, path: str, line_number: int) -> AnswerPair:
    """
    Parse one dataset line (without its terminator).

    Raises:
        DatasetFormatError: Naming the path and line number
    """
    fields = line.split("\t")
    if len(fields) != FIELD_COUNT:
        raise DatasetFormatError(path, line_number, f"expected {FIELD_COUNT} tab-separated fields, found {len(fields)}")
    pair_id, label, student, reference = fields
    if label not in ("0", "1"):
        raise DatasetFormatError(path, line_number, f"label must be 0 or 1, found '{label}'")
    try:
        return AnswerPair(
            id=unescape_field(pair_id),
            label=int(label),
            student_text=unescape_field(student),
            reference_text=unescape_field(reference),
        )
    except (ValueError, ValidationError) as exc:
        reason = exc.errors()[0]["msg"] if isinstance(exc, ValidationError) else str(exc)
        raise DatasetFormatError(path, line_number, reason) from None


def read_dataset(path: Union[str, Path]) -> List[AnswerPair]:
    """
    Read every pair of a dataset file.

    Raises:
        DataError: If the file does not exist
        DatasetFormatError: On the first malformed line
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    pairs = []
    with path.open(encoding="utf-8", newline="\n") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw[:-1] if raw.endswith("\n") else raw
            if not line:
                continue
            pairs.append(parse_line(line, str(path), line_number))
    logger.debug(f"Read {len(pairs)} pairs from {path}")
    return pairs


def write_dataset(pairs: Iterable[AnswerPair], path: Union[str, Path]) -> int:
    """
    Write pairs in dataset format, creating parent directories.

    Returns:
        Number of pairs written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for pair in pairs:
            handle.write(format_pair(pair) + "\n")
            count += 1
    logger.debug(f"Wrote {count} pairs to {path}")
    return count
