"""Data pipeline: tokenization, vocabulary, embeddings, batching, dataset files, synthetic data."""

from app.data.batching import Batch, encode_pairs, make_batches, pad_truncate, prefetch
from app.data.dataset import read_dataset, write_dataset
from app.data.embeddings import EmbeddingTable, load_embeddings
from app.data.synthetic import generate_synthetic_dataset, keyword_overlap_label
from app.data.text import tokenize
from app.data.vocabulary import PAD_ID, UNK_ID, Vocabulary, build_vocab

__all__ = [
    "Batch",
    "EmbeddingTable",
    "PAD_ID",
    "UNK_ID",
    "Vocabulary",
    "build_vocab",
    "encode_pairs",
    "generate_synthetic_dataset",
    "keyword_overlap_label",
    "load_embeddings",
    "make_batches",
    "pad_truncate",
    "prefetch",
    "read_dataset",
    "tokenize",
    "write_dataset",
]
