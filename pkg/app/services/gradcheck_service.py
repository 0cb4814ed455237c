"""
Gradient Check Service

Finite-difference verification of every layer and of the full model at a
tiny configuration (L=4, d_model=8, two examples). Layer checks read the
output through a fixed random linear readout so every coordinate carries a
non-trivial gradient. Attention key biases cannot affect the output, so
their gradients are asserted to vanish instead of compared. The full-model check differentiates the real
cross-entropy loss with respect to every parameter, sampling coordinates.
"""

import logging
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core import tensor as T
from app.core.gradcheck import grad_check_many, max_abs_gradient
from app.core.nn import (
    FeedForwardParams,
    LayerNormParams,
    LinearLayer,
    MultiHeadAttentionParams,
    TransformerBlockParams,
    embed,
    layer_norm,
    linear_forward,
    multi_head_attention,
    positionwise_ffn,
    transformer_block,
)
from app.core.tensor import Tensor
from app.data.batching import Batch
from app.data.vocabulary import PAD_ID, UNK_ID
from app.model.asag import (
    ModelParams,
    attention_pooling,
    init_params,
    inside_aggregation,
    loss,
    model_forward,
    predict,
)
from app.model.multiway import CROSS_KINDS, cross_attention, multiway_forward, self_attention_block
from app.monitoring.timing import StageTimer
from app.schemas.grading import GradCheckEntry, GradCheckReport, ModelConfig
from app.services.seeding import GRADCHECK, RngStreams

logger = logging.getLogger(__name__)

LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
STEP = 1e-4
# Bound on |gradient| for parameters the output cannot depend on
STATIONARY_TOLERANCE = 1e-10
MODEL_COORDS_PER_TENSOR = 16

TINY_CONFIG = {
    "vocab_size": 12,
    "d_emb": 8,
    "d_model": 8,
    "head_count": 2,
    "d_ffn": 16,
    "max_len": 4,
    "encoder_layers": 1,
    "aggregation_layers": 1,
    "pooling_dim": 8,
    "dropout_rate": 0.0,
    "share_encoders": True,
}

# Valid lengths of the two examples
STUDENT_LENGTHS = (4, 2)
REFERENCE_LENGTHS = (3, 4)

Check = Tuple[Callable[[], Tensor], List[Tensor]]
StationaryCheck = Tuple[Callable[[], Tensor], Tensor]


def tiny_model_config(overrides: Optional[Mapping[str, object]] = None, seed: int = 13) -> ModelConfig:
    values: Dict[str, object] = dict(TINY_CONFIG, seed=seed)
    values.update(overrides or {})
    return ModelConfig(**values)


def tiny_batch(config: ModelConfig, rng: np.random.Generator) -> Batch:
    """Two examples with different padding on each side."""
    length = config.max_len

    def ids(lengths: Sequence[int]) -> np.ndarray:
        out = np.full((len(lengths), length), PAD_ID, dtype=np.int64)
        for row, count in enumerate(lengths):
            count = min(count, length)
            out[row, :count] = rng.integers(UNK_ID, config.vocab_size, size=count)
        return out

    student_ids = ids(STUDENT_LENGTHS)
    reference_ids = ids(REFERENCE_LENGTHS)
    return Batch(
        student_ids=student_ids,
        reference_ids=reference_ids,
        student_mask=student_ids != PAD_ID,
        reference_mask=reference_ids != PAD_ID,
        labels=np.array([1, 0], dtype=np.int64),
        pair_ids=["gradcheck-0", "gradcheck-1"],
    )


class GradCheckSuite:
    """Builds and runs the named checks."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.params: ModelParams = init_params(config, rng)
        self.batch = tiny_batch(config, rng)
        self._readouts: Dict[tuple, np.ndarray] = {}
        # Filled by checks(): parameters whose gradient must vanish, with the function that uses them
        self.stationary: Dict[str, StationaryCheck] = {}

    # helpers ---------------------------------------------------------

    def leaf(self, *shape: int) -> Tensor:
        return Tensor(self.rng.normal(size=shape), requires_grad=True)

    def readout(self, out: Tensor, slot: int = 0) -> Tensor:
        """sum(out * R) with a random R drawn once per (shape, slot)."""
        key = (out.shape, slot)
        if key not in self._readouts:
            self._readouts[key] = self.rng.normal(size=out.shape)
        return T.reduce_sum(out * self._readouts[key])

    @staticmethod
    def without_key_bias(attention: MultiHeadAttentionParams) -> List[Tensor]:
        """
        Attention parameters minus the key bias.

        The key bias shifts every score of a query by the same amount, which
        softmax cancels, so its gradient is exactly zero and its relative error
        is pure round-off. It is checked separately for vanishing instead.
        """
        return [p for p in attention.parameters() if p is not attention.key.bias]

    def sequences(self) -> Tuple[Tensor, Tensor]:
        d = self.config.d_model
        return self.leaf(2, self.config.max_len, d), self.leaf(2, self.config.max_len, d)

    # checks ----------------------------------------------------------

    def checks(self) -> Dict[str, Check]:
        config = self.config
        d = config.d_model
        q_mask = self.batch.student_mask
        p_mask = self.batch.reference_mask
        found: Dict[str, Check] = {}

        layer = LinearLayer.create(self.rng, d, d)
        x = self.leaf(2, config.max_len, d)
        found["linear"] = (lambda: self.readout(linear_forward(layer, x)), [x] + layer.parameters())

        norm = LayerNormParams.create(d)
        norm.gain.data = self.rng.normal(size=d)
        norm.bias.data = self.rng.normal(size=d)
        x_norm = self.leaf(2, config.max_len, d)
        found["layer_norm"] = (
            lambda: self.readout(layer_norm(x_norm, norm.gain, norm.bias)),
            [x_norm] + norm.parameters(),
        )

        ffn = FeedForwardParams.create(self.rng, d, config.d_ffn, d)
        x_ffn = self.leaf(2, config.max_len, d)
        found["positionwise_ffn"] = (lambda: self.readout(positionwise_ffn(ffn, x_ffn)), [x_ffn] + ffn.parameters())

        table = Tensor(self.rng.normal(size=(config.vocab_size, config.d_emb)), requires_grad=True)
        found["embedding"] = (
            lambda: self.readout(embed(self.batch.student_ids, table, q_mask).vectors),
            [table],
        )

        attention = MultiHeadAttentionParams.create(self.rng, d, config.head_count)
        x_att = self.leaf(2, config.max_len, d)
        def attention_readout() -> Tensor:
            return self.readout(multi_head_attention(attention, x_att, x_att, q_mask))

        found["multi_head_attention"] = (attention_readout, [x_att] + self.without_key_bias(attention))
        self.stationary["multi_head_attention.key.bias"] = (attention_readout, attention.key.bias)

        block = TransformerBlockParams.create(self.rng, d, config.head_count, config.d_ffn)
        x_block = self.leaf(2, config.max_len, d)
        def block_readout() -> Tensor:
            return self.readout(transformer_block(block, x_block, q_mask))

        block_params = [p for p in block.parameters() if p is not block.attention.key.bias]
        found["transformer_block"] = (block_readout, [x_block] + block_params)
        self.stationary["transformer_block.attention.key.bias"] = (block_readout, block.attention.key.bias)

        h_self = self.leaf(2, config.max_len, d)
        found["self_attention"] = (lambda: self.readout(self_attention_block(h_self, q_mask)), [h_self])

        multiway = self.params.multiway
        for kind in CROSS_KINDS:
            h_q, h_p = self.sequences()
            tensors = [h_q, h_p] + (getattr(multiway, kind).parameters() if kind != "dot" else [])
            found[f"cross_attention.{kind}"] = (
                lambda kind=kind, h_q=h_q, h_p=h_p: self.readout(
                    cross_attention(kind, multiway, h_q, h_p, p_mask=p_mask, q_mask=q_mask)
                ),
                tensors,
            )

        h_q, h_p = self.sequences()

        def multiway_readout() -> Tensor:
            outputs = multiway_forward(multiway, h_q, h_p, q_mask, p_mask).tensors()
            total = self.readout(outputs[0])
            for index, out in enumerate(outputs[1:], start=1):
                total = total + self.readout(out, index)
            return total

        found["multiway"] = (multiway_readout, [h_q, h_p] + multiway.parameters())

        g_q, g_p = self.sequences()
        aggregation_params = (
            self.params.fuse_p.parameters()
            + self.params.fuse_q.parameters()
            + self.params.fuse_c.parameters()
            + self.params.fusion_projection.parameters()
        )

        def aggregation_readout() -> Tensor:
            mw = multiway_forward(multiway, g_q, g_p, q_mask, p_mask)
            return self.readout(inside_aggregation(self.params, mw, g_q, g_p, q_mask, p_mask).Z)

        found["inside_aggregation"] = (aggregation_readout, [g_q, g_p] + aggregation_params)

        z = self.leaf(2, config.max_len, d)
        pool_mask = q_mask | p_mask
        found["attention_pooling"] = (
            lambda: self.readout(attention_pooling(self.params.pooling, z, pool_mask)),
            [z] + self.params.pooling.parameters(),
        )

        pooled = self.leaf(2, d)
        found["prediction_head"] = (
            lambda: loss(predict(self.params, pooled), self.batch.labels),
            [pooled] + self.params.head.parameters(),
        )
        return found

    def full_model(self) -> Check:
        return (lambda: loss(model_forward(self.params, self.batch), self.batch.labels), self.params.parameters())

    # running ---------------------------------------------------------

    def run(self, include_model: bool = True) -> GradCheckReport:
        entries: List[GradCheckEntry] = []
        with StageTimer("gradient check suite") as timer:
            for name, (f, tensors) in self.checks().items():
                error = grad_check_many(f, tensors, eps=STEP)
                entries.append(GradCheckEntry(name=name, max_error=error, tolerance=LAYER_TOLERANCE))
                logger.debug(f"gradcheck {name}: {error:.3e}")
            for name, (f, tensor) in self.stationary.items():
                magnitude = max_abs_gradient(f, tensor)
                entries.append(
                    GradCheckEntry(name=name, max_error=magnitude, tolerance=STATIONARY_TOLERANCE, metric="absolute")
                )
            if include_model:
                f, tensors = self.full_model()
                error = grad_check_many(f, tensors, eps=STEP, max_coords=MODEL_COORDS_PER_TENSOR, rng=self.rng)
                entries.append(GradCheckEntry(name="full_model", max_error=error, tolerance=MODEL_TOLERANCE))
        return GradCheckReport(entries=entries, elapsed_s=timer.elapsed_s)


def run_gradcheck_suite(
    seed: int = 13,
    overrides: Optional[Mapping[str, object]] = None,
    include_model: bool = True,
) -> GradCheckReport:
    """
    Run every layer check plus the full-model check.

    Args:
        seed: Root seed (inputs, parameters and sampled coordinates)
        overrides: ModelConfig values replacing the tiny defaults
        include_model: Also run the full-model check

    Returns:
        One entry per check with its max relative error and tolerance
    """
    config = tiny_model_config(overrides, seed)
    suite = GradCheckSuite(config, RngStreams(seed).stream(GRADCHECK))
    report = suite.run(include_model)
    failed = [entry.name for entry in report.entries if not entry.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
    else:
        logger.info(f"All {len(report.entries)} gradient checks passed in {report.elapsed_s:.1f}s")
    return report


def format_report(report: GradCheckReport) -> List[str]:
    """name, max error (relative, or |gradient| for stationary parameters), tolerance, PASS/FAIL per line."""
    return [
        f"{entry.name}\t{entry.max_error:.3e}\t{entry.tolerance:.0e}\t{'PASS' if entry.passed else 'FAIL'}"
        for entry in report.entries
    ]
