"""
Short Answer Grading Network

End-to-end assembly: embed both answers, encode them with transformer
blocks, run multiway attention, fuse the streams by inside aggregation,
pool with self-attention pooling and emit [P(wrong), P(right)].

Everything runs on whole batches: sequences are [B, L, d] and masks [B, L].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.core import tensor as T
from app.core.nn import (
    EmbeddedSequence,
    FeedForwardParams,
    LinearLayer,
    ParameterGroup,
    TransformerBlockParams,
    embed,
    glorot_uniform,
    linear_forward,
    parameter,
    positional_encoding,
    positionwise_ffn,
    transformer_block,
)
from app.core.tensor import Tensor
from app.data.batching import Batch
from app.data.vocabulary import PAD_ID
from app.model.multiway import MultiwayOutput, MultiwayParams, multiway_forward
from app.schemas.grading import ModelConfig

PROB_FLOOR = 1e-12
WRONG, RIGHT = 0, 1


@dataclass
class PoolingParams(ParameterGroup):
    """x = softmax(w1 tanh(W2 Z^T)) Z with w1 [1 x d_att], W2 [d_att x d_model]."""

    w1: Tensor
    W2: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d_att: int, d_model: int) -> "PoolingParams":
        return cls(
            w1=parameter(glorot_uniform(rng, d_att, 1, (1, d_att))),
            W2=parameter(glorot_uniform(rng, d_model, d_att, (d_att, d_model))),
        )


@dataclass
class OutputHead(ParameterGroup):
    """Two-layer feed-forward head: relu hidden layer of width d_model, then 2 logits."""

    hidden: LinearLayer
    logits: LinearLayer

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int) -> "OutputHead":
        return cls(hidden=LinearLayer.create(rng, d_model, d_model), logits=LinearLayer.create(rng, d_model, 2))


@dataclass
class ModelParams(ParameterGroup):
    """
    Every learnable tensor of the network plus the config it was built for.

    reference_encoder is empty when config.share_encoders is set;
    input_projection is None when d_emb == d_model.
    """

    config: ModelConfig
    embedding: Tensor
    input_projection: Optional[LinearLayer]
    encoder: List[TransformerBlockParams]
    reference_encoder: List[TransformerBlockParams]
    multiway: MultiwayParams
    fuse_p: FeedForwardParams
    fuse_q: FeedForwardParams
    fuse_c: FeedForwardParams
    fusion_projection: LinearLayer
    aggregation: List[TransformerBlockParams]
    pooling: PoolingParams
    head: OutputHead

    def reference_blocks(self) -> List[TransformerBlockParams]:
        return self.encoder if self.config.share_encoders else self.reference_encoder


@dataclass
class FusedSequence:
    """Compressed per-position streams g_p, g_q, g_c, each [..., L, d_model]."""

    g_p: Tensor
    g_q: Tensor
    g_c: Tensor


@dataclass
class AggregatedSequence:
    """Z [..., L, d_model] and the positions that carry content."""

    Z: Tensor
    mask: np.ndarray
    fused: Optional[FusedSequence] = None


# ----------------------------------------------------------------------
# Initialization
# ----------------------------------------------------------------------


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """
    Glorot-uniform weights, zero biases, unit layer-norm gains; PAD embedding row zero.

    The draw order is fixed, so the same generator state yields bit-identical parameters.
    """
    d = config.d_model

    def blocks(count: int) -> List[TransformerBlockParams]:
        return [TransformerBlockParams.create(rng, d, config.head_count, config.d_ffn) for _ in range(count)]

    table = glorot_uniform(rng, config.vocab_size, config.d_emb, (config.vocab_size, config.d_emb))
    table[PAD_ID] = 0.0
    input_projection = LinearLayer.create(rng, config.d_emb, d) if config.d_emb != d else None
    encoder = blocks(config.encoder_layers)
    reference_encoder = [] if config.share_encoders else blocks(config.encoder_layers)

    return ModelParams(
        config=config,
        embedding=parameter(table),
        input_projection=input_projection,
        encoder=encoder,
        reference_encoder=reference_encoder,
        multiway=MultiwayParams.create(rng, d),
        fuse_p=FeedForwardParams.create(rng, 2 * d, config.d_ffn, d),
        fuse_q=FeedForwardParams.create(rng, 2 * d, config.d_ffn, d),
        fuse_c=FeedForwardParams.create(rng, 4 * d, config.d_ffn, d),
        fusion_projection=LinearLayer.create(rng, 3 * d, d),
        aggregation=blocks(config.aggregation_layers),
        pooling=PoolingParams.create(rng, config.pooling_dim, d),
        head=OutputHead.create(rng, d),
    )


# ----------------------------------------------------------------------
# Forward stages
# ----------------------------------------------------------------------


def _mask_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    return x * np.asarray(mask, dtype=np.float64)[..., None]


def _encode(
    params: ModelParams,
    blocks: List[TransformerBlockParams],
    sequence: EmbeddedSequence,
    rng: Optional[np.random.Generator],
) -> Tensor:
    length = sequence.vectors.shape[-2]
    x = _mask_rows(sequence.vectors + positional_encoding(length, params.config.d_emb), sequence.valid_mask)
    if params.input_projection is not None:
        x = _mask_rows(linear_forward(params.input_projection, x), sequence.valid_mask)
    for block in blocks:
        x = transformer_block(block, x, sequence.valid_mask, params.config.dropout_rate, rng)
    return x


def encode_answers(
    params: ModelParams,
    student: EmbeddedSequence,
    reference: EmbeddedSequence,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """
    Contextual encodings H_q (student) and H_p (reference), each [..., L, d_model].

    Embeddings plus sinusoidal positions go through the encoder blocks; the
    reference uses the student blocks when encoders are shared.
    """
    H_q = _encode(params, params.encoder, student, rng)
    H_p = _encode(params, params.reference_blocks(), reference, rng)
    return H_q, H_p


def inside_aggregation(
    params: ModelParams,
    mw: MultiwayOutput,
    H_q: Tensor,
    H_p: Tensor,
    q_mask: np.ndarray,
    p_mask: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> AggregatedSequence:
    """
    Fuse self and cross streams per position and re-encode them into Z.

    g_q = FFN_q([h^q; s^q]), g_p = FFN_p([h^p; s^p]), g_c = FFN_c([h^a; h^s; h^m; h^d]);
    [g^p; g^q; g^c] is projected to d_model and passed through the aggregation
    blocks. Position i of Z carries content when either answer has a token there.
    """
    q_mask = np.asarray(q_mask, dtype=bool)
    p_mask = np.asarray(p_mask, dtype=bool)
    g_q = _mask_rows(positionwise_ffn(params.fuse_q, T.concat([H_q, mw.self_student], axis=-1)), q_mask)
    g_p = _mask_rows(positionwise_ffn(params.fuse_p, T.concat([H_p, mw.self_reference], axis=-1)), p_mask)
    g_c = _mask_rows(positionwise_ffn(params.fuse_c, T.concat(list(mw.cross), axis=-1)), q_mask)

    mask = q_mask | p_mask
    x = _mask_rows(linear_forward(params.fusion_projection, T.concat([g_p, g_q, g_c], axis=-1)), mask)
    for block in params.aggregation:
        x = transformer_block(block, x, mask, params.config.dropout_rate, rng)
    return AggregatedSequence(Z=x, mask=mask, fused=FusedSequence(g_p=g_p, g_q=g_q, g_c=g_c))


def attention_pooling(pp: PoolingParams, Z: Tensor, mask=None, return_weights: bool = False):
    """
    Collapse Z [..., L, d] to x [..., d] with a = softmax(w1 tanh(W2 Z^T)) over unmasked positions.

    Raises:
        MaskingError: If every position is masked
    """
    Z = T.as_tensor(Z)
    hidden = T.tanh(T.matmul(Z, T.transpose(pp.W2)))
    scores = T.matmul(hidden, T.transpose(pp.w1))
    scores = T.reshape(scores, scores.shape[:-1])
    weights = T.masked_softmax(scores, mask, axis=-1)
    pooled = T.matmul(T.reshape(weights, weights.shape[:-1] + (1, weights.shape[-1])), Z)
    x = T.reshape(pooled, pooled.shape[:-2] + (pooled.shape[-1],))
    if return_weights:
        return x, weights
    return x


def predict_logits(params: ModelParams, x: Tensor) -> Tensor:
    hidden = T.relu(linear_forward(params.head.hidden, x))
    return linear_forward(params.head.logits, hidden)


def predict(params: ModelParams, x: Tensor) -> Tensor:
    """[P(wrong), P(right)] for pooled vectors x [..., d_model]."""
    return T.softmax(predict_logits(params, x), axis=-1)


def loss(probs: Tensor, labels) -> Tensor:
    """
    Mean cross-entropy -log(max(probs[label], 1e-12)).

    Args:
        probs: [2] or [B, 2]
        labels: 0/1 scalar or [B] array

    Raises:
        ValueError: If a label is not 0 or 1
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not np.isin(labels, (WRONG, RIGHT)).all():
        raise ValueError(f"labels must be 0 or 1, got {np.unique(labels).tolist()}")
    probs = T.as_tensor(probs)
    if probs.ndim == 1:
        picked = T.getitem(probs, (labels.reshape(-1),))
    else:
        picked = T.getitem(probs, (np.arange(probs.shape[0]), labels.reshape(-1)))
    return T.neg(T.reduce_mean(T.log(T.clamp_min(picked, PROB_FLOOR))))


def model_forward(
    params: ModelParams,
    batch: Batch,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Class probabilities [B, 2] for every pair in the batch.

    Args:
        params: Network parameters
        batch: Padded and masked batch
        rng: Dropout generator (training); None for deterministic inference
    """
    student = embed(batch.student_ids, params.embedding, batch.student_mask)
    reference = embed(batch.reference_ids, params.embedding, batch.reference_mask)
    H_q, H_p = encode_answers(params, student, reference, rng)
    mw = multiway_forward(params.multiway, H_q, H_p, batch.student_mask, batch.reference_mask)
    aggregated = inside_aggregation(params, mw, H_q, H_p, batch.student_mask, batch.reference_mask, rng)
    x = attention_pooling(params.pooling, aggregated.Z, aggregated.mask)
    return predict(params, x)
