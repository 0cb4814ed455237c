"""
Training Service

Mini-batch training of the grading network: forward, cross-entropy,
backward, clipping and Adam per batch; validation metrics per epoch; the
parameters with the best validation AUC are retained, optionally with early
stopping. Every random draw comes from named seed streams, so a run is fully
determined by (seed, config, dataset).
"""

import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.tensor import backward, zero_grads
from app.data.batching import make_batches, prefetch
from app.data.vocabulary import Vocabulary
from app.exceptions import NumericError
from app.logging_config import TRAINING_LOGGER
from app.model.asag import RIGHT, ModelParams, loss, model_forward
from app.monitoring.timing import StageTimer
from app.schemas.grading import AnswerPair, EpochRecord, TrainingConfig, TrainReport
from app.services.checkpoint import save_checkpoint
from app.services.evaluation import DECISION_THRESHOLD, auc_or_nan, binary_accuracy, score_pairs
from app.services.optimizer import AdamState, adam_step, clip_grad_norm
from app.services.seeding import DROPOUT, SHUFFLE, RngStreams

logger = logging.getLogger(__name__)
training_log = logging.getLogger(TRAINING_LOGGER)

METRICS_COLUMNS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "val_auc")

EpochCallback = Callable[[EpochRecord], None]


def format_epoch(record: EpochRecord) -> str:
    """Tab-separated metrics line in METRICS_COLUMNS order (wall time excluded)."""
    return "\t".join(
        [
            str(record.epoch),
            f"{record.train_loss:.6f}",
            f"{record.train_accuracy:.6f}",
            f"{record.val_loss:.6f}",
            f"{record.val_accuracy:.6f}",
            f"{record.val_auc:.6f}",
        ]
    )


def write_metrics_file(report: TrainReport, path: Union[str, Path]) -> Path:
    """Header line plus one line per completed epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(METRICS_COLUMNS)] + [format_epoch(record) for record in report.epochs]
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    return path


def _is_improvement(candidate: float, best: Optional[float]) -> bool:
    if best is None:
        return True
    if math.isnan(candidate):
        return False
    return math.isnan(best) or candidate > best


class TrainingService:
    """
    Owns the optimizer state and the epoch loop for one set of parameters.

    Args:
        params: Parameters to train in place
        config: Optimizer and loop settings
        vocab: Vocabulary the batches are encoded with
        streams: Seed streams for shuffling and dropout
        out_dir: When set, best.ckpt is rewritten on every validation AUC improvement
    """

    def __init__(
        self,
        params: ModelParams,
        config: TrainingConfig,
        vocab: Vocabulary,
        streams: RngStreams,
        out_dir: Optional[Union[str, Path]] = None,
    ):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.streams = streams
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.named = list(params.named_parameters())
        self.state = AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.best_state: Dict[str, np.ndarray] = self.snapshot()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named}

    def restore(self, state: Dict[str, np.ndarray]) -> None:
        for name, tensor in self.named:
            tensor.data = state[name].copy()

    def restore_best(self) -> None:
        self.restore(self.best_state)

    def train_epoch(
        self,
        epoch: int,
        train: Sequence[AnswerPair],
        shuffle_rng: np.random.Generator,
        dropout_rng: Optional[np.random.Generator],
    ) -> Tuple[float, float]:
        """
        One pass over the training set.

        Returns:
            (mean training loss, training accuracy)

        Raises:
            NumericError: On a non-finite loss (with epoch/batch) or gradient (with parameter name)
        """
        config = self.config
        batches = make_batches(train, self.vocab, self.params.config.max_len, config.batch_size, shuffle_rng)
        tensors = [tensor for _, tensor in self.named]
        total_loss = 0.0
        correct = 0
        seen = 0
        for batch_index, batch in enumerate(prefetch(batches, config.prefetch), start=1):
            zero_grads(tensors)
            probs = model_forward(self.params, batch, dropout_rng)
            batch_loss = loss(probs, batch.labels)
            value = batch_loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {batch_index}")
            backward(batch_loss)
            norm = clip_grad_norm(tensors, config.clip_norm)
            logger.debug(f"epoch {epoch} batch {batch_index}: loss={value:.6f} grad_norm={norm:.4f}")
            adam_step(self.state, self.named)

            total_loss += value * len(batch)
            correct += int(np.count_nonzero((probs.data[:, RIGHT] >= DECISION_THRESHOLD) == batch.labels))
            seen += len(batch)
        return total_loss / seen, correct / seen

    def fit(
        self,
        train: Sequence[AnswerPair],
        val: Sequence[AnswerPair],
        on_epoch: Optional[EpochCallback] = None,
    ) -> TrainReport:
        """
        Train for config.epochs epochs (fewer when early stopping triggers).

        On return the parameters hold the last epoch's weights and best_state
        the best-validation-AUC snapshot.

        Args:
            train: Non-empty training pairs
            val: Non-empty validation pairs
            on_epoch: Called with every completed epoch's record

        Raises:
            ValueError: If either set is empty
            NumericError: On a non-finite loss or gradient
        """
        if not train or not val:
            raise ValueError(f"fit needs non-empty sets, got {len(train)} train and {len(val)} validation pairs")

        config = self.config
        shuffle_rng = self.streams.stream(SHUFFLE)
        dropout_rng = self.streams.stream(DROPOUT) if self.params.config.dropout_rate > 0 else None
        report = TrainReport(best_epoch=0 if config.epochs == 0 else None)
        stale = 0

        for epoch in range(1, config.epochs + 1):
            with StageTimer(f"epoch {epoch}") as timer:
                train_loss, train_accuracy = self.train_epoch(epoch, train, shuffle_rng, dropout_rng)
                scores, labels, val_loss = score_pairs(self.params, self.vocab, val, config.batch_size)
            record = EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                train_accuracy=train_accuracy,
                val_loss=val_loss,
                val_accuracy=binary_accuracy(scores, labels),
                val_auc=auc_or_nan(scores, labels),
                wall_time_s=timer.elapsed_s,
            )
            report.epochs.append(record)
            training_log.info(
                f"epoch {epoch}: train_loss={train_loss:.4f} train_acc={train_accuracy:.4f} "
                f"val_loss={val_loss:.4f} val_acc={record.val_accuracy:.4f} val_auc={record.val_auc:.4f} "
                f"({timer.elapsed_s:.1f}s)"
            )
            if on_epoch is not None:
                on_epoch(record)

            if _is_improvement(record.val_auc, report.best_val_auc):
                report.best_epoch = epoch
                report.best_val_auc = record.val_auc
                self.best_state = self.snapshot()
                stale = 0
                if self.out_dir is not None:
                    save_checkpoint(self.params, None, self.out_dir / "best.ckpt")
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    training_log.info(f"Early stop after epoch {epoch}: no validation AUC gain in {stale} epochs")
                    report.stopped_early = True
                    break

        if report.epochs:
            training_log.info(f"Best epoch {report.best_epoch} (val_auc={report.best_val_auc:.4f})")
        return report


def fit(
    config: TrainingConfig,
    params: ModelParams,
    train: Sequence[AnswerPair],
    val: Sequence[AnswerPair],
    vocab: Vocabulary,
    streams: Optional[RngStreams] = None,
    out_dir: Optional[Union[str, Path]] = None,
    restore_best: bool = True,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainReport:
    """
    Train params on train, validating on val after every epoch.

    Args:
        config: Optimizer and loop settings
        params: Parameters, updated in place
        train: Training pairs
        val: Validation pairs
        vocab: Vocabulary for encoding
        streams: Seed streams (default: from params.config.seed)
        out_dir: Optional directory for best.ckpt
        restore_best: Leave params at the best-validation-AUC epoch instead of the last one
        on_epoch: Per-epoch callback

    Returns:
        TrainReport with one record per completed epoch
    """
    service = TrainingService(params, config, vocab, streams or RngStreams(params.config.seed), out_dir)
    report = service.fit(train, val, on_epoch)
    if restore_best:
        service.restore_best()
    return report


def dataset_loss(params: ModelParams, pairs: List[AnswerPair], vocab: Vocabulary) -> float:
    """Mean loss of pairs as one unshuffled batch in inference mode."""
    _, _, mean_loss = score_pairs(params, vocab, pairs, batch_size=max(len(pairs), 1))
    return mean_loss
