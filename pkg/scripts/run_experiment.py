#!/usr/bin/env python3
"""
Multiway ASAG vs. Lexical-Overlap Baseline

Generates a noisy synthetic corpus, trains the grading network, fits the
logistic-regression overlap baseline on the same training split and
reports test accuracy and AUC for both.

The synthetic labels depend on keyword concepts that synonyms hide from
surface overlap, so the network is expected to beat the baseline on AUC.
The script exits with status 1 unless the network reaches test AUC >= 0.90
and beats the baseline AUC by at least 0.03 (override with --min-auc and
--min-gain).

Runtime grows linearly with --train and --epochs. The default scale (8,000
training pairs, 10 epochs, default model) is sized for roughly half an hour
on a desktop CPU; the smaller settings below finish in a few minutes but are
not expected to meet the targets, so relax them there.

Usage:
    python scripts/run_experiment.py
    python scripts/run_experiment.py --epochs 5 --noise 0.1 --out runs/experiment
    python scripts/run_experiment.py --train 2000 --valid 250 --test 500 --epochs 3 --min-auc 0 --min-gain -1
"""

import argparse
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import settings
from app.data.dataset import write_dataset
from app.data.synthetic import generate_synthetic_dataset
from app.data.vocabulary import build_vocab
from app.logging_config import setup_logging
from app.model.asag import init_params
from app.schemas.grading import ModelConfig, SyntheticSpec, TrainingConfig
from app.services.evaluation import (
    TARGET_AUC,
    TARGET_AUC_GAIN,
    auc_or_nan,
    binary_accuracy,
    evaluate_params,
    experiment_shortfalls,
    lr_baseline_fit,
    lr_baseline_scores,
)
from app.services.seeding import DATA, INIT, set_global_seed
from app.services.training_service import fit, format_epoch


def main() -> int:
    parser = argparse.ArgumentParser(description="Compare the grading network with the overlap baseline")
    parser.add_argument("--train", type=int, default=8000, help="Training pairs (default: 8000)")
    parser.add_argument("--valid", type=int, default=1000, help="Validation pairs (default: 1000)")
    parser.add_argument("--test", type=int, default=2000, help="Test pairs (default: 2000)")
    parser.add_argument("--noise", type=float, default=0.1, help="Label noise rate (default: 0.1)")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    parser.add_argument("--out", default=None, help="Optional directory for the generated splits and best.ckpt")
    parser.add_argument("--min-auc", type=float, default=TARGET_AUC, help=f"Required test AUC (default: {TARGET_AUC})")
    parser.add_argument(
        "--min-gain", type=float, default=TARGET_AUC_GAIN, help=f"Required AUC gain over LR (default: {TARGET_AUC_GAIN})"
    )
    args = parser.parse_args()

    setup_logging(log_dir=settings.LOG_DIR, log_file=settings.LOG_FILE)
    streams = set_global_seed(args.seed)

    total = args.train + args.valid + args.test
    spec = SyntheticSpec(num_pairs=total + total % 2, noise_rate=args.noise)
    pairs = generate_synthetic_dataset(spec, streams.stream(DATA))
    train = pairs[: args.train]
    valid = pairs[args.train : args.train + args.valid]
    test = pairs[args.train + args.valid : total]

    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        for name, split in (("train.tsv", train), ("valid.tsv", valid), ("test.tsv", test)):
            write_dataset(split, out_dir / name)

    print(f"\n{'='*70}")
    print("Multiway ASAG Experiment")
    print(f"{'='*70}")
    print(f"Pairs: {len(train)} train / {len(valid)} valid / {len(test)} test, noise={args.noise}")
    print(f"{'='*70}")

    vocab = build_vocab(train)
    config = ModelConfig(vocab_size=len(vocab), seed=args.seed)
    params = init_params(config, streams.stream(INIT))
    if out_dir is not None:
        vocab.save(out_dir / "vocab.txt")

    training = TrainingConfig(epochs=args.epochs, batch_size=args.batch_size)
    print("\nepoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tval_auc")
    report = fit(
        training, params, train, valid, vocab, streams, out_dir, restore_best=True,
        on_epoch=lambda record: print(format_epoch(record)),
    )  # fmt: skip

    model_record = evaluate_params(params, vocab, test, name="test", batch_size=args.batch_size)

    baseline = lr_baseline_fit(train, vocab)
    scores = lr_baseline_scores(baseline, test, vocab)
    labels = np.array([pair.label for pair in test])
    baseline_accuracy = binary_accuracy(scores, labels)
    baseline_auc = auc_or_nan(scores, labels)

    print(f"\n{'='*70}")
    print("RESULTS (test split)")
    print(f"{'='*70}")
    print(f"{'system':24}{'accuracy':>12}{'auc':>12}")
    print(f"{'multiway network':24}{model_record.accuracy:12.4f}{model_record.auc:12.4f}")
    print(f"{'overlap baseline (LR)':24}{baseline_accuracy:12.4f}{baseline_auc:12.4f}")
    print(f"{'='*70}")
    print(f"Best epoch: {report.best_epoch}, baseline iterations: {baseline.iterations}")
    gain = model_record.auc - baseline_auc
    print(f"AUC gain over baseline: {gain:+.4f}\n")

    shortfalls = experiment_shortfalls(model_record.auc, baseline_auc, args.min_auc, args.min_gain)
    for shortfall in shortfalls:
        print(f"FAIL: {shortfall}")
    if shortfalls:
        return 1
    print(f"PASS: AUC >= {args.min_auc:.2f} and gain >= {args.min_gain:+.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
