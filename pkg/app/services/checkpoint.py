"""
Checkpoint Service

Binary container for ModelParams. Layout (all integers little-endian):

    magic       4 bytes  b"ASAG"
    version     uint32
    config      uint32 byte length + UTF-8 JSON of ModelConfig (sorted keys)
    count       uint32 number of parameters
    per param   uint32 name length + UTF-8 name, uint32 rank, rank x uint64 extents,
                row-major float64 payload
    checksum    uint64: 8-byte BLAKE2b digest of every preceding byte

Loading verifies the checksum before anything else is parsed, so a damaged
file never yields partially loaded parameters.
"""

import hashlib
import json
import logging
import os
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from app.data.vocabulary import Vocabulary
from app.exceptions import CheckpointError, DataError
from app.model.asag import ModelParams, init_params
from app.schemas.grading import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"ASAG"
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8
VOCAB_FILE = "vocab.txt"

PathLike = Union[str, Path]


def checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def _config_bytes(config: ModelConfig) -> bytes:
    return json.dumps(config.model_dump(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_checkpoint(params: ModelParams, config: Optional[ModelConfig] = None) -> bytes:
    """Encode params (and their config) into the checkpoint container."""
    config = config or params.config
    if config != params.config:
        raise CheckpointError("config does not match the config the parameters were built for")

    named = list(params.named_parameters())
    config_blob = _config_bytes(config)
    chunks: List[bytes] = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    chunks.append(struct.pack("<I", len(config_blob)))
    chunks.append(config_blob)
    chunks.append(struct.pack("<I", len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes(order="C"))
    body = b"".join(chunks)
    return body + checksum(body)


def save_checkpoint(params: ModelParams, config: Optional[ModelConfig], path: PathLike) -> Path:
    """
    Write a checkpoint atomically (temporary file, then rename).

    Args:
        params: Model parameters
        config: Model config; must equal params.config (None uses params.config)
        path: Destination file

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = serialize_checkpoint(params, config)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path} ({len(blob)} bytes)")
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint payload")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.data)


def deserialize_checkpoint(
    blob: bytes,
    expected_config: Optional[ModelConfig] = None,
    source: str = "<checkpoint>",
) -> Tuple[ModelParams, ModelConfig]:
    """
    Decode a checkpoint container.

    Args:
        blob: Raw file contents
        expected_config: Validate tensor shapes against this config instead of the stored one
        source: Name used in error messages

    Raises:
        CheckpointError: On checksum, version, config or shape mismatch
    """
    if len(blob) < len(MAGIC) + CHECKSUM_BYTES:
        raise CheckpointError(f"{source}: checksum mismatch (file too short)")
    body, stored = blob[:-CHECKSUM_BYTES], blob[-CHECKSUM_BYTES:]
    if checksum(body) != stored:
        raise CheckpointError(f"{source}: checksum mismatch")

    reader = _Reader(body, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version} (expected {FORMAT_VERSION})")

    (config_length,) = reader.unpack("<I")
    try:
        config = ModelConfig(**json.loads(reader.take(config_length).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{source}: invalid model config: {exc}") from exc

    skeleton = init_params(expected_config or config, np.random.default_rng(0))
    targets = dict(skeleton.named_parameters())

    (count,) = reader.unpack("<I")
    loaded: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = tuple(int(extent) for extent in reader.unpack(f"<{rank}Q"))
        if name not in targets:
            raise CheckpointError(f"{source}: unexpected tensor '{name}'")
        if shape != targets[name].shape:
            raise CheckpointError(
                f"{source}: shape mismatch for tensor '{name}': stored {shape}, expected {targets[name].shape}"
            )
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(8 * size)
        loaded[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)

    missing = sorted(set(targets) - set(loaded))
    if missing:
        raise CheckpointError(f"{source}: missing tensors {missing}")
    if not reader.exhausted:
        raise CheckpointError(f"{source}: trailing bytes after the last tensor")

    for name, tensor in targets.items():
        tensor.data = loaded[name]
    skeleton.config = config
    return skeleton, config


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None) -> Tuple[ModelParams, ModelConfig]:
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        expected_config: When given, tensor shapes are checked against this config

    Returns:
        (params, config) with every tensor bit-identical to the saved one

    Raises:
        DataError: If the file does not exist
        CheckpointError: On checksum, version or shape mismatch
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    params, config = deserialize_checkpoint(path.read_bytes(), expected_config, str(path))
    logger.debug(f"Loaded checkpoint {path}")
    return params, config


def vocab_path_for(checkpoint: PathLike) -> Path:
    """The vocabulary file stored next to a checkpoint."""
    return Path(checkpoint).parent / VOCAB_FILE


def load_checkpoint_with_vocab(path: PathLike) -> Tuple[ModelParams, Vocabulary]:
    """
    Load a checkpoint plus the vocabulary saved in its directory.

    Raises:
        DataError: If either file is missing or malformed
        CheckpointError: If the vocabulary size disagrees with the checkpoint
    """
    params, config = load_checkpoint(path)
    vocab_path = vocab_path_for(path)
    if not vocab_path.is_file():
        raise DataError(f"vocabulary not found next to checkpoint: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    if len(vocab) != config.vocab_size:
        raise CheckpointError(
            f"{vocab_path}: vocabulary has {len(vocab)} tokens but checkpoint expects {config.vocab_size}"
        )
    return params, vocab
