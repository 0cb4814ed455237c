"""
Neural Layers

Linear maps, layer normalization, position-wise feed-forward networks,
embeddings, sinusoidal positional encoding, multi-head attention and the
post-norm transformer encoder block.

All layers accept leading batch axes: a sequence is [..., L, d] and a
padding mask is a boolean array [..., L] (True = real token).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Iterator, List, Optional, Tuple

import numpy as np

from app.core import tensor as T
from app.core.tensor import Tensor
from app.exceptions import ShapeError

LAYER_NORM_EPS = 1e-5


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Draw from uniform(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out)))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def parameter(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


class ParameterGroup:
    """
    Mixin for dataclasses that hold learnable tensors.

    Tensors, nested groups and lists of either are discovered in field order,
    which gives every parameter a stable dotted name.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            yield from _walk(getattr(self, f.name), f"{prefix}{f.name}")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]


def _walk(value, name: str) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParameterGroup):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


# ----------------------------------------------------------------------
# Linear
# ----------------------------------------------------------------------


@dataclass
class LinearLayer(ParameterGroup):
    """xW + b with weight [d_in x d_out] and bias [d_out]."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "LinearLayer":
        return cls(
            weight=parameter(glorot_uniform(rng, d_in, d_out, (d_in, d_out))),
            bias=parameter(np.zeros(d_out)),
        )

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """
    Apply a linear layer over the last axis.

    Raises:
        ShapeError: If the last extent of x is not d_in
    """
    x = T.as_tensor(x)
    if x.ndim == 0 or x.shape[-1] != layer.d_in:
        raise ShapeError(f"linear: input shape {x.shape} does not end in d_in={layer.d_in}")
    if x.ndim == 1:
        return T.reshape(linear_forward(layer, T.reshape(x, (1, layer.d_in))), (layer.d_out,))
    return T.matmul(x, layer.weight) + layer.bias


# ----------------------------------------------------------------------
# Layer normalization
# ----------------------------------------------------------------------


@dataclass
class LayerNormParams(ParameterGroup):
    gain: Tensor
    bias: Tensor

    @classmethod
    def create(cls, d: int) -> "LayerNormParams":
        return cls(gain=parameter(np.ones(d)), bias=parameter(np.zeros(d)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """
    Normalize the last axis to mean 0 and variance 1, then apply gain and bias.

    The standard deviation is floored at sqrt(eps): constant rows map to zero,
    rows that are already normalized pass through unchanged.
    """
    x = T.as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise ShapeError(f"layer_norm: last extent must be >= 2, got shape {x.shape}")
    centered = x - T.reduce_mean(x, axis=-1, keepdims=True)
    variance = T.reduce_mean(centered * centered, axis=-1, keepdims=True)
    normalized = centered * T.power(T.clamp_min(variance, eps), -0.5)
    return normalized * gain + bias


# ----------------------------------------------------------------------
# Position-wise feed-forward network
# ----------------------------------------------------------------------


@dataclass
class FeedForwardParams(ParameterGroup):
    """relu(x W1 + b1) W2 + b2."""

    inner: LinearLayer
    outer: LinearLayer

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> "FeedForwardParams":
        return cls(inner=LinearLayer.create(rng, d_in, d_hidden), outer=LinearLayer.create(rng, d_hidden, d_out))


def positionwise_ffn(params: FeedForwardParams, x: Tensor) -> Tensor:
    return linear_forward(params.outer, T.relu(linear_forward(params.inner, x)))


# ----------------------------------------------------------------------
# Embeddings and positions
# ----------------------------------------------------------------------


@dataclass
class EmbeddedSequence:
    """Token ids [..., L], their vectors [..., L, d_emb] and the validity mask [..., L]."""

    tokens: np.ndarray
    vectors: Tensor
    valid_mask: np.ndarray


def embed(tokens, table: Tensor, mask=None) -> EmbeddedSequence:
    """
    Look up embedding rows and zero the rows at masked positions.

    Raises:
        ShapeError: If an id is outside the table
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    valid = np.ones(tokens.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != tokens.shape:
        raise ShapeError(f"embed: mask shape {valid.shape} differs from token shape {tokens.shape}")
    vectors = T.take_rows(table, tokens) * valid[..., None].astype(np.float64)
    return EmbeddedSequence(tokens=tokens, vectors=vectors, valid_mask=valid)


@lru_cache(maxsize=32)
def _sinusoid_table(length: int, d: int) -> np.ndarray:
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((length, d))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    table.setflags(write=False)
    return table


def positional_encoding(length: int, d: int) -> Tensor:
    """
    Sinusoidal table PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).

    Raises:
        ShapeError: If d is odd or either extent is < 1
    """
    if d % 2 != 0:
        raise ShapeError(f"positional_encoding: width must be even, got {d}")
    if length < 1 or d < 2:
        raise ShapeError(f"positional_encoding: invalid extents L={length}, d={d}")
    return T.constant(_sinusoid_table(length, d).copy())


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given (inference)."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * keep


# ----------------------------------------------------------------------
# Multi-head attention
# ----------------------------------------------------------------------


@dataclass
class MultiHeadAttentionParams(ParameterGroup):
    """
    Query/key/value/output projections, each [d x d].

    Head h uses columns [h*d_head, (h+1)*d_head) of the query, key and value
    projections, i.e. the per-head projections stored side by side.
    """

    query: LinearLayer
    key: LinearLayer
    value: LinearLayer
    output: LinearLayer
    head_count: int

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, head_count: int) -> "MultiHeadAttentionParams":
        if d_model % head_count != 0:
            raise ShapeError(f"d_model={d_model} is not divisible by head_count={head_count}")
        return cls(
            query=LinearLayer.create(rng, d_model, d_model),
            key=LinearLayer.create(rng, d_model, d_model),
            value=LinearLayer.create(rng, d_model, d_model),
            output=LinearLayer.create(rng, d_model, d_model),
            head_count=head_count,
        )

    @property
    def d_model(self) -> int:
        return self.query.d_in


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., L, d] -> [..., heads, L, d / heads]"""
    *lead, length, d = x.shape
    split = T.reshape(x, (*lead, length, heads, d // heads))
    axes = list(range(split.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(split, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., heads, L, d_head] -> [..., L, heads * d_head]"""
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    merged = T.transpose(x, axes)
    *lead, length, heads, d_head = merged.shape
    return T.reshape(merged, (*lead, length, heads * d_head))


def multi_head_attention(
    params: MultiHeadAttentionParams,
    queries: Tensor,
    keys: Tensor,
    key_mask=None,
    values: Optional[Tensor] = None,
    return_weights: bool = False,
):
    """
    Scaled dot-product attention per head, heads concatenated then projected.

    Args:
        params: Projections and head count
        queries: [..., Lq, d]
        keys: [..., Lk, d]; also the values unless `values` is given
        key_mask: Boolean [..., Lk]; True marks keys that may be attended
        values: Optional [..., Lk, d]
        return_weights: Also return the attention weights [..., heads, Lq, Lk]

    Returns:
        [..., Lq, d] (and the weights when requested)

    Raises:
        ShapeError: If d is not divisible by head_count or widths disagree
        MaskingError: If every key of some query is masked
    """
    queries, keys = T.as_tensor(queries), T.as_tensor(keys)
    values = keys if values is None else T.as_tensor(values)
    d = params.d_model
    heads = params.head_count
    if d % heads != 0:
        raise ShapeError(f"multi_head_attention: d={d} is not divisible by head_count={heads}")
    for label, t in (("queries", queries), ("keys", keys), ("values", values)):
        if t.ndim < 2 or t.shape[-1] != d:
            raise ShapeError(f"multi_head_attention: {label} shape {t.shape} does not end in d={d}")

    q = _split_heads(linear_forward(params.query, queries), heads)
    k = _split_heads(linear_forward(params.key, keys), heads)
    v = _split_heads(linear_forward(params.value, values), heads)

    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d // heads))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, None, :]
    weights = T.masked_softmax(scores, mask, axis=-1)
    output = linear_forward(params.output, _merge_heads(T.matmul(weights, v)))
    if return_weights:
        return output, weights
    return output


# ----------------------------------------------------------------------
# Transformer encoder block
# ----------------------------------------------------------------------


@dataclass
class TransformerBlockParams(ParameterGroup):
    attention: MultiHeadAttentionParams
    attention_norm: LayerNormParams
    ffn: FeedForwardParams
    ffn_norm: LayerNormParams

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, head_count: int, d_ffn: int) -> "TransformerBlockParams":
        return cls(
            attention=MultiHeadAttentionParams.create(rng, d_model, head_count),
            attention_norm=LayerNormParams.create(d_model),
            ffn=FeedForwardParams.create(rng, d_model, d_ffn, d_model),
            ffn_norm=LayerNormParams.create(d_model),
        )

    @property
    def head_count(self) -> int:
        return self.attention.head_count

    @property
    def d_model(self) -> int:
        return self.attention.d_model

    @property
    def d_ffn(self) -> int:
        return self.ffn.inner.d_out


def transformer_block(
    params: TransformerBlockParams,
    x: Tensor,
    mask=None,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Post-norm encoder block: LN(x + MHA(x)), then LN(y + FFN(y)); masked rows zeroed.

    Args:
        params: Block parameters
        x: [..., L, d]
        mask: Boolean [..., L]; None means every position is real
        dropout_rate: Dropout applied to both sub-layer outputs (training only)
        rng: Dropout generator; None disables dropout

    Returns:
        [..., L, d]
    """
    x = T.as_tensor(x)
    attended = dropout(multi_head_attention(params.attention, x, x, mask), dropout_rate, rng)
    y = layer_norm(x + attended, params.attention_norm.gain, params.attention_norm.bias)
    transformed = dropout(positionwise_ffn(params.ffn, y), dropout_rate, rng)
    z = layer_norm(y + transformed, params.ffn_norm.gain, params.ffn_norm.bias)
    if mask is None:
        return z
    return z * np.asarray(mask, dtype=np.float64)[..., None]
