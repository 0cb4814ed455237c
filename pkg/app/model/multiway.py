"""
Multiway Attention

A parameter-free self-attention block per sequence plus four cross-attention
mechanisms in which every student position attends over the reference
sequence:

    additive:        e_ij = v_a . tanh(W1 h_j^p + W2 h_i^q)
    subtractive:     e_ij = v_s . tanh(W_s (h_j^p - h_i^q))
    multiplicative:  e_ij = v_m . tanh(W_m (h_j^p * h_i^q))
    dot:             e_ij = (h_j^p . h_i^q) / sqrt(d)

Weights are a masked softmax over reference positions j and the output row is
sum_j alpha_ij h_j^p. Row vectors multiply weights on the right (x W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.core import tensor as T
from app.core.nn import ParameterGroup, glorot_uniform, parameter
from app.core.tensor import Tensor
from app.exceptions import ShapeError

CROSS_KINDS = ("additive", "subtractive", "multiplicative", "dot")


@dataclass
class ScoredProjection(ParameterGroup):
    """Projection W [d x d] followed by tanh and a score vector v [d x 1]."""

    weight: Tensor
    score: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d: int) -> "ScoredProjection":
        return cls(
            weight=parameter(glorot_uniform(rng, d, d, (d, d))),
            score=parameter(glorot_uniform(rng, d, 1, (d, 1))),
        )


@dataclass
class AdditiveParams(ParameterGroup):
    reference_projection: Tensor
    student_projection: Tensor
    score: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d: int) -> "AdditiveParams":
        return cls(
            reference_projection=parameter(glorot_uniform(rng, d, d, (d, d))),
            student_projection=parameter(glorot_uniform(rng, d, d, (d, d))),
            score=parameter(glorot_uniform(rng, d, 1, (d, 1))),
        )


@dataclass
class MultiwayParams(ParameterGroup):
    """Independent parameters per mechanism; the dot mechanism has none."""

    additive: AdditiveParams
    subtractive: ScoredProjection
    multiplicative: ScoredProjection

    @classmethod
    def create(cls, rng: np.random.Generator, d: int) -> "MultiwayParams":
        return cls(
            additive=AdditiveParams.create(rng, d),
            subtractive=ScoredProjection.create(rng, d),
            multiplicative=ScoredProjection.create(rng, d),
        )

    @property
    def d(self) -> int:
        return self.subtractive.weight.shape[0]


@dataclass
class MultiwayOutput:
    """
    Self-attention outputs for both sequences and the four cross outputs.

    All six tensors are [..., L, d]; cross outputs are indexed by student position.
    """

    self_student: Tensor
    self_reference: Tensor
    additive: Tensor
    subtractive: Tensor
    multiplicative: Tensor
    dot: Tensor

    @property
    def cross(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.additive, self.subtractive, self.multiplicative, self.dot)

    def tensors(self) -> Tuple[Tensor, ...]:
        return (self.self_student, self.self_reference) + self.cross


def _row_mask(mask) -> Optional[np.ndarray]:
    return None if mask is None else np.asarray(mask, dtype=np.float64)[..., None]


def _zero_masked_rows(x: Tensor, mask) -> Tensor:
    return x if mask is None else x * _row_mask(mask)


def _key_mask(mask) -> Optional[np.ndarray]:
    """[..., Lk] -> [..., 1, Lk] so it broadcasts over query rows."""
    return None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]


def self_attention_block(h: Tensor, mask=None, return_weights: bool = False):
    """
    s_i = sum_j alpha_ij h_j with alpha_i = softmax_j((h_i . h_j) / sqrt(d)) over unmasked j.

    Args:
        h: [..., L, d]
        mask: Boolean [..., L]
        return_weights: Also return alpha [..., L, L]

    Returns:
        [..., L, d] with masked rows zero (and the weights when requested)

    Raises:
        MaskingError: If the sequence is fully masked
    """
    h = T.as_tensor(h)
    scores = T.scale(T.matmul(h, T.transpose(h)), 1.0 / math.sqrt(h.shape[-1]))
    weights = T.masked_softmax(scores, _key_mask(mask), axis=-1)
    output = _zero_masked_rows(T.matmul(weights, h), mask)
    if return_weights:
        return output, weights
    return output


def _pairwise(reference: Tensor, student: Tensor, combine) -> Tensor:
    """combine(h_j^p, h_i^q) for every (i, j): [..., Lq, Lp, d]"""
    expanded_reference = T.reshape(reference, reference.shape[:-2] + (1,) + reference.shape[-2:])
    expanded_student = T.reshape(student, student.shape[:-1] + (1, student.shape[-1]))
    return combine(expanded_reference, expanded_student)


def _score_vector(features: Tensor, score: Tensor) -> Tensor:
    """[..., Lq, Lp, d] x v[d x 1] -> [..., Lq, Lp]"""
    scored = T.matmul(features, score)
    return T.reshape(scored, scored.shape[:-1])


def cross_scores(kind: str, params: Optional[MultiwayParams], h_q: Tensor, h_p: Tensor) -> Tensor:
    """
    Unnormalized scores e_ij [..., Lq, Lp] for one mechanism.

    Raises:
        ValueError: If kind is unknown
        ShapeError: If the sequences have different widths
    """
    h_q, h_p = T.as_tensor(h_q), T.as_tensor(h_p)
    if h_q.shape[-1] != h_p.shape[-1]:
        raise ShapeError(f"cross attention: widths differ for shapes {h_q.shape} and {h_p.shape}")

    if kind == "dot":
        return T.scale(T.matmul(h_q, T.transpose(h_p)), 1.0 / math.sqrt(h_q.shape[-1]))
    if params is None:
        raise ValueError(f"cross attention kind '{kind}' needs parameters")
    if kind == "additive":
        p = params.additive
        projected_reference = T.matmul(h_p, p.reference_projection)
        projected_student = T.matmul(h_q, p.student_projection)
        features = T.tanh(_pairwise(projected_reference, projected_student, T.add))
        return _score_vector(features, p.score)
    if kind == "subtractive":
        p = params.subtractive
        features = T.tanh(T.matmul(_pairwise(h_p, h_q, T.sub), p.weight))
        return _score_vector(features, p.score)
    if kind == "multiplicative":
        p = params.multiplicative
        features = T.tanh(T.matmul(_pairwise(h_p, h_q, T.mul), p.weight))
        return _score_vector(features, p.score)
    raise ValueError(f"cross attention kind must be one of: {', '.join(CROSS_KINDS)}")


def cross_attention(
    kind: str,
    params: Optional[MultiwayParams],
    h_q: Tensor,
    h_p: Tensor,
    p_mask=None,
    q_mask=None,
    return_weights: bool = False,
):
    """
    Student positions attend over the reference sequence with one mechanism.

    Args:
        kind: additive, subtractive, multiplicative or dot
        params: Mechanism parameters (unused by dot)
        h_q: Student sequence [..., Lq, d]
        h_p: Reference sequence [..., Lp, d]
        p_mask: Boolean [..., Lp]; True marks attendable reference positions
        q_mask: Optional boolean [..., Lq]; masked student rows are zeroed
        return_weights: Also return alpha [..., Lq, Lp]

    Returns:
        [..., Lq, d] (and the weights when requested)

    Raises:
        MaskingError: If the reference is fully masked
    """
    h_p = T.as_tensor(h_p)
    weights = T.masked_softmax(cross_scores(kind, params, h_q, h_p), _key_mask(p_mask), axis=-1)
    output = _zero_masked_rows(T.matmul(weights, h_p), q_mask)
    if return_weights:
        return output, weights
    return output


def multiway_forward(params: MultiwayParams, h_q: Tensor, h_p: Tensor, q_mask=None, p_mask=None) -> MultiwayOutput:
    """
    Self-attention on each sequence plus all four cross mechanisms.

    Raises:
        ShapeError: If the encodings have different widths
    """
    h_q, h_p = T.as_tensor(h_q), T.as_tensor(h_p)
    if h_q.shape[-1] != h_p.shape[-1]:
        raise ShapeError(f"multiway: encodings have different widths {h_q.shape} and {h_p.shape}")
    cross = {
        kind: cross_attention(kind, params, h_q, h_p, p_mask=p_mask, q_mask=q_mask) for kind in CROSS_KINDS
    }
    return MultiwayOutput(
        self_student=self_attention_block(h_q, q_mask),
        self_reference=self_attention_block(h_p, p_mask),
        **cross,
    )
