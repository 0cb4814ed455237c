"""
Multiway ASAG - Command-Line Entry Point

Subcommands:
    gen-data   write synthetic train/valid/test splits
    train      fit the grading network, write checkpoints and the metrics file
    eval       evaluate a checkpoint on a dataset file
    grade      grade one answer pair (or every pair of a dataset file)
    gradcheck  finite-difference verification of every layer and the full model

Exit statuses: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

Usage:
    python -m app.main gen-data --out data --pairs 1000 --seed 7
    python -m app.main train --data-dir data --out-dir runs/desk --epochs 10
    python -m app.main eval --checkpoint runs/desk/final.ckpt --data data/test.tsv
    python -m app.main grade --checkpoint runs/desk/best.ckpt --student "..." --reference "..."
    python -m app.main gradcheck --seed 13
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from app import __version__
from app.config import MODEL_KEYS, load_run_config, parse_config_text, settings
from app.data.dataset import read_dataset, write_dataset
from app.data.embeddings import load_embeddings
from app.data.synthetic import generate_synthetic_dataset
from app.data.vocabulary import build_vocab
from app.exceptions import ConfigError, DataError, GraderError, NumericError
from app.logging_config import setup_logging
from app.model.asag import init_params
from app.schemas.grading import AnswerPair, EpochRecord, SyntheticSpec
from app.services.checkpoint import VOCAB_FILE, save_checkpoint
from app.services.evaluation import evaluate_model
from app.services.grading_service import GradingService
from app.services.gradcheck_service import format_report, run_gradcheck_suite
from app.services.seeding import DATA, EMBEDDINGS, INIT, set_global_seed
from app.services.training_service import TrainingService, format_epoch, write_metrics_file

logger = logging.getLogger(__name__)

TRAIN_FILE = "train.tsv"
VALID_FILE = "valid.tsv"
TEST_FILE = "test.tsv"
BEST_CHECKPOINT = "best.ckpt"
FINAL_CHECKPOINT = "final.ckpt"
METRICS_FILE = "metrics.tsv"
RUN_CONFIG_FILE = "run_config.txt"


class CliArgumentParser(argparse.ArgumentParser):
    """Usage errors raise ConfigError so they map onto exit status 1."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def split_sizes(total: int, valid_fraction: float, test_fraction: float) -> Dict[str, int]:
    valid = int(total * valid_fraction)
    test = int(total * test_fraction)
    if valid + test >= total:
        raise ConfigError(f"split fractions leave no training pairs out of {total}")
    return {"train": total - valid - test, "valid": valid, "test": test}


def _print(line: str) -> None:
    print(line, flush=True)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Write train/valid/test splits of a synthetic corpus."""
    spec = SyntheticSpec(
        num_pairs=args.pairs,
        num_references=args.references,
        keywords_per_reference=args.keywords,
        reference_length=args.reference_length,
        filler_vocab_size=args.fillers,
        synonyms_per_keyword=args.synonyms,
        synonym_rate=args.synonym_rate,
        noise_rate=args.noise,
    )
    sizes = split_sizes(spec.num_pairs, args.valid_fraction, args.test_fraction)
    pairs = generate_synthetic_dataset(spec, set_global_seed(args.seed).stream(DATA))

    out = Path(args.out)
    start = 0
    for name, file_name in (("train", TRAIN_FILE), ("valid", VALID_FILE), ("test", TEST_FILE)):
        count = write_dataset(pairs[start : start + sizes[name]], out / file_name)
        start += sizes[name]
        _print(f"{out / file_name}\t{count}")
    return 0


def _collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {
        "data_dir": args.data_dir,
        "out_dir": args.out_dir,
        "embeddings": args.embeddings,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "patience": args.patience,
        "seed": args.seed,
        "max_len": args.max_len,
        "d_model": args.d_model,
    }
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = value
    return overrides


def cmd_train(args: argparse.Namespace) -> int:
    """Fit the model; writes best/final checkpoints, vocabulary, run config and metrics."""
    run = load_run_config(args.config, _collect_overrides(args))
    if run.data_dir is None:
        raise ConfigError("no data directory given (--data-dir or data_dir=)")
    if run.out_dir is None:
        raise ConfigError("no output directory given (--out-dir or out_dir=)")

    data_dir = Path(run.data_dir)
    train = read_dataset(data_dir / TRAIN_FILE)
    val = read_dataset(data_dir / VALID_FILE)
    if not train or not val:
        raise DataError(f"{data_dir}: training and validation sets must be non-empty")

    vocab = build_vocab(train, min_count=run.training.min_count)
    if run.model.vocab_size != len(vocab):
        logger.info(f"vocab_size set to {len(vocab)} from the training corpus")
    model_config = run.model.model_copy(update={"vocab_size": len(vocab)})
    run = run.model_copy(update={"model": model_config})

    streams = set_global_seed(model_config.seed)
    params = init_params(model_config, streams.stream(INIT))
    if run.embeddings is not None:
        table = load_embeddings(run.embeddings, vocab, model_config.d_emb, streams.stream(EMBEDDINGS))
        params.embedding.data = table.vectors
        logger.info(f"Pre-trained vectors cover {table.coverage:.1%} of the vocabulary")

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / VOCAB_FILE)
    (out_dir / RUN_CONFIG_FILE).write_text(run.to_text(), encoding="utf-8")

    service = TrainingService(params, run.training, vocab, streams, out_dir)
    if run.training.epochs == 0:
        save_checkpoint(params, None, out_dir / BEST_CHECKPOINT)

    def on_epoch(record: EpochRecord) -> None:
        _print(format_epoch(record))

    report = service.fit(train, val, on_epoch)
    save_checkpoint(params, None, out_dir / FINAL_CHECKPOINT)
    write_metrics_file(report, out_dir / METRICS_FILE)
    logger.info(
        f"Training finished: {len(report.epochs)} epochs, best epoch {report.best_epoch}"
        + (" (early stop)" if report.stopped_early else "")
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    record = evaluate_model(args.checkpoint, args.data, batch_size=args.batch_size)
    _print(record.to_line())
    return 0


def cmd_grade(args: argparse.Namespace) -> int:
    """Grade --student against --reference, or every pair of --data."""
    if args.data is None and (args.student is None or args.reference is None):
        raise ConfigError("grade needs --student and --reference, or --data")
    grader = GradingService.from_checkpoint(args.checkpoint)
    if args.data is not None:
        pairs: List[AnswerPair] = read_dataset(args.data)
        for pair, result in zip(pairs, grader.grade_pairs(pairs)):
            _print(f"{pair.id}\t{result.to_line()}")
        return 0
    _print(grader.grade(args.student, args.reference).to_line())
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Run the finite-difference suite; exit status 3 when any check exceeds its tolerance."""
    overrides: Dict[str, object] = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
        overrides = {key: value for key, value in values.items() if key in MODEL_KEYS and key != "seed"}
    report = run_gradcheck_suite(seed=args.seed, overrides=overrides, include_model=not args.skip_model)
    for line in format_report(report):
        _print(line)
    _print(f"elapsed_s={report.elapsed_s:.2f}\tstatus={'PASS' if report.passed else 'FAIL'}")
    if not report.passed:
        failed = ", ".join(entry.name for entry in report.entries if not entry.passed)
        raise NumericError(f"gradient check failed: {failed}")
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(prog="asag", description="Multiway-attention short answer grader")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", default=settings.DEBUG, help="Enable debug logging")
    parser.add_argument("--log-dir", default=settings.LOG_DIR, help="Directory of the rotating training log")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliArgumentParser)

    gen = commands.add_parser("gen-data", help="Write synthetic train/valid/test splits")
    gen.add_argument("--out", required=True, help="Output directory")
    gen.add_argument("--pairs", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    gen.add_argument("--noise", type=float, default=0.0, help="Chance a pair's content contradicts its label")
    gen.add_argument("--references", type=int, default=50)
    gen.add_argument("--keywords", type=int, default=5, help="Keyword concepts per reference")
    gen.add_argument("--reference-length", type=int, default=12)
    gen.add_argument("--fillers", type=int, default=300, help="Filler vocabulary size")
    gen.add_argument("--synonyms", type=int, default=2, help="Synonyms per keyword")
    gen.add_argument("--synonym-rate", type=float, default=0.3)
    gen.add_argument("--valid-fraction", type=float, default=0.1)
    gen.add_argument("--test-fraction", type=float, default=0.2)
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="Train the grading network")
    train.add_argument("--config", help="key=value run configuration file")
    train.add_argument("--data-dir", help="Directory with train.tsv and valid.tsv")
    train.add_argument("--out-dir", help="Directory for checkpoints and metrics")
    train.add_argument("--embeddings", help="Pre-trained word-vector text file")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--patience", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--max-len", type=int)
    train.add_argument("--d-model", type=int)
    train.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override any config key")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True, help="Dataset file")
    evaluate.add_argument("--batch-size", type=int, default=64)
    evaluate.set_defaults(handler=cmd_eval)

    grade = commands.add_parser("grade", help="Grade a student answer")
    grade.add_argument("--checkpoint", required=True)
    grade.add_argument("--student", help="Student answer text")
    grade.add_argument("--reference", help="Reference answer text")
    grade.add_argument("--data", help="Grade every pair of this dataset file instead")
    grade.set_defaults(handler=cmd_grade)

    check = commands.add_parser("gradcheck", help="Finite-difference gradient verification")
    check.add_argument("--config", help="key=value file; model keys override the tiny configuration")
    check.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    check.add_argument("--skip-model", action="store_true", help="Run the per-layer checks only")
    check.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and map failures onto exit statuses.

    Returns:
        0 on success, 1 for usage/config errors, 2 for data and I/O errors, 3 for numeric failures
    """
    try:
        args = build_parser().parse_args(argv)
    except GraderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    try:
        setup_logging(debug=args.debug, log_dir=args.log_dir, log_file=settings.LOG_FILE)
    except OSError as exc:
        print(f"error: cannot open log file: {exc}", file=sys.stderr)
        return DataError.exit_code

    try:
        return args.handler(args)
    except GraderError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code
    except ValidationError as exc:
        logger.error(f"invalid input: {exc}")
        return ConfigError.exit_code
    except OSError as exc:
        logger.error(f"I/O failure: {exc}")
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
