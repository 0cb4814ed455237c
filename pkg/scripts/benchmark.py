#!/usr/bin/env python3
"""
Multiway ASAG Performance Benchmark

Times the hot paths of the grading network on synthetic batches:
- Multiway matching layer forward
- Inference forward (no graph)
- Training step: forward, loss, backward, Adam update
- Single-pair grading latency

Usage:
    python scripts/benchmark.py
    python scripts/benchmark.py --iterations 20 --batch-size 64
    python scripts/benchmark.py --verbose
"""

import argparse
import statistics
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import settings
from app.core.tensor import Tensor, backward, no_grad, zero_grads
from app.data.batching import encode_pairs
from app.data.synthetic import generate_synthetic_dataset
from app.data.vocabulary import build_vocab
from app.model.asag import init_params, loss, model_forward
from app.model.multiway import multiway_forward
from app.schemas.grading import ModelConfig, SyntheticSpec, TrainingConfig
from app.services.grading_service import GradingService
from app.services.optimizer import AdamOptimizer
from app.services.seeding import DATA, INIT, set_global_seed

# p95 targets in milliseconds for the default architecture on one CPU core
TARGETS = {
    "multiway_forward": 50.0,
    "inference_forward": 400.0,
    "training_step": 1500.0,
    "grade_single": 50.0,
}


class PerformanceBenchmark:
    """Benchmark the grading network's critical operations."""

    def __init__(self, iterations: int = 10, batch_size: int = 32, verbose: bool = False):
        """
        Build a model and a batch of synthetic pairs.

        Args:
            iterations: Number of times to run each operation
            batch_size: Pairs per batch
            verbose: Print detailed timing for each iteration
        """
        self.iterations = iterations
        self.verbose = verbose

        streams = set_global_seed(settings.DEFAULT_SEED)
        spec = SyntheticSpec(num_pairs=max(batch_size + batch_size % 2, 2), num_references=8)
        self.pairs = generate_synthetic_dataset(spec, streams.stream(DATA))[:batch_size]
        self.vocab = build_vocab(self.pairs)
        self.config = ModelConfig(vocab_size=len(self.vocab), dropout_rate=0.0)
        self.params = init_params(self.config, streams.stream(INIT))
        self.batch = encode_pairs(self.pairs, self.vocab, self.config.max_len)
        training = TrainingConfig()
        self.optimizer = AdamOptimizer(
            self.params.named_parameters(), lr=training.learning_rate, beta1=training.beta1, beta2=training.beta2
        )

    def time_operation(self, operation_name: str, operation_func: Callable[[], object]) -> Tuple[List[float], object]:
        """
        Time an operation multiple times.

        Returns:
            Tuple of (timing_list, last_result)
        """
        timings = []
        last_result = None

        for i in range(self.iterations):
            start = time.perf_counter()
            last_result = operation_func()
            duration_ms = (time.perf_counter() - start) * 1000
            timings.append(duration_ms)

            if self.verbose:
                print(f"  [{i+1}/{self.iterations}] {operation_name}: {duration_ms:.2f}ms")

        return timings, last_result

    def calculate_stats(self, timings: List[float]) -> Dict[str, float]:
        """Mean, median, p95, min, max and count of timings in milliseconds."""
        if not timings:
            return {"mean": 0, "median": 0, "p95": 0, "min": 0, "max": 0, "count": 0}

        sorted_timings = sorted(timings)
        return {
            "mean": statistics.mean(timings),
            "median": statistics.median(timings),
            "p95": sorted_timings[min(int(len(sorted_timings) * 0.95), len(sorted_timings) - 1)],
            "min": min(timings),
            "max": max(timings),
            "count": len(timings),
        }

    def print_stats(self, operation_name: str, stats: Dict[str, float], target_p95: float):
        passed = stats["p95"] <= target_p95
        status = "PASS" if passed else "FAIL"
        status_color = "\033[92m" if passed else "\033[91m"
        reset_color = "\033[0m"

        print(f"\n{operation_name}:")
        print(f"  Mean:   {stats['mean']:.2f}ms")
        print(f"  Median: {stats['median']:.2f}ms")
        print(f"  P95:    {stats['p95']:.2f}ms (target: <{target_p95}ms) {status_color}{status}{reset_color}")
        print(f"  Min:    {stats['min']:.2f}ms")
        print(f"  Max:    {stats['max']:.2f}ms")
        print(f"  Count:  {stats['count']} iterations")

    def benchmark_multiway(self) -> Dict[str, float]:
        """Multiway layer on random encoder outputs of the batch's shape."""
        print("\n[1/4] Benchmarking multiway matching layer...")
        rng = np.random.default_rng(0)
        shape = (len(self.batch), self.config.max_len, self.config.d_model)
        h_q, h_p = Tensor(rng.normal(size=shape)), Tensor(rng.normal(size=shape))

        def run():
            with no_grad():
                return multiway_forward(
                    self.params.multiway, h_q, h_p, self.batch.student_mask, self.batch.reference_mask
                )

        timings, _ = self.time_operation("Multiway Forward", run)
        stats = self.calculate_stats(timings)
        self.print_stats("Multiway Forward", stats, TARGETS["multiway_forward"])
        return stats

    def benchmark_inference(self) -> Dict[str, float]:
        print("\n[2/4] Benchmarking inference forward...")

        def run():
            with no_grad():
                return model_forward(self.params, self.batch)

        timings, _ = self.time_operation("Inference Forward", run)
        stats = self.calculate_stats(timings)
        self.print_stats("Inference Forward", stats, TARGETS["inference_forward"])
        return stats

    def benchmark_training_step(self) -> Dict[str, float]:
        print("\n[3/4] Benchmarking training step...")
        tensors = self.params.parameters()

        def run():
            zero_grads(tensors)
            batch_loss = loss(model_forward(self.params, self.batch), self.batch.labels)
            backward(batch_loss)
            self.optimizer.step()
            return batch_loss.item()

        timings, last_loss = self.time_operation("Training Step", run)
        stats = self.calculate_stats(timings)
        self.print_stats("Training Step", stats, TARGETS["training_step"])
        if last_loss is not None:
            print(f"  Loss after {self.iterations} steps: {last_loss:.4f}")
        return stats

    def benchmark_grade(self) -> Dict[str, float]:
        print("\n[4/4] Benchmarking single-pair grading...")
        grader = GradingService(self.params, self.vocab)
        pair = self.pairs[0]

        timings, _ = self.time_operation("Grade Single", lambda: grader.grade(pair.student_text, pair.reference_text))
        stats = self.calculate_stats(timings)
        self.print_stats("Grade Single", stats, TARGETS["grade_single"])
        return stats

    def run_all(self) -> Dict[str, Dict[str, float]]:
        """Run all benchmarks and return results."""
        print(f"\n{'='*70}")
        print("Multiway ASAG Performance Benchmark")
        print(f"{'='*70}")
        print(f"Iterations per operation: {self.iterations}")
        print(f"Batch: {len(self.batch)} pairs x {self.config.max_len} tokens, d_model={self.config.d_model}")
        print(f"{'='*70}")

        results = {
            "multiway_forward": self.benchmark_multiway(),
            "inference_forward": self.benchmark_inference(),
            "training_step": self.benchmark_training_step(),
            "grade_single": self.benchmark_grade(),
        }
        self.print_summary(results)
        return results

    def print_summary(self, results: Dict[str, Dict[str, float]]):
        print(f"\n{'='*70}")
        print("SUMMARY")
        print(f"{'='*70}")

        passed = 0
        failed = 0
        for operation, stats in results.items():
            target = TARGETS[operation]
            p95 = stats.get("p95", float("inf"))
            if p95 <= target:
                passed += 1
                status, status_color = "PASS", "\033[92m"
            else:
                failed += 1
                status, status_color = "FAIL", "\033[91m"
            print(f"{operation:20} P95: {p95:8.2f}ms (target: <{target:5.0f}ms) {status_color}{status}\033[0m")

        print(f"{'='*70}")
        print(f"Results: {passed} passed, {failed} failed")
        print(f"{'='*70}\n")


def main():
    """Main entry point."""
    parser = argparse.ArgumentParser(description="Multiway ASAG Performance Benchmark")
    parser.add_argument("--iterations", type=int, default=10, help="Number of iterations per operation (default: 10)")
    parser.add_argument("--batch-size", type=int, default=32, help="Pairs per batch (default: 32)")
    parser.add_argument("--verbose", action="store_true", help="Print detailed timing for each iteration")
    args = parser.parse_args()

    benchmark = PerformanceBenchmark(iterations=args.iterations, batch_size=args.batch_size, verbose=args.verbose)
    try:
        benchmark.run_all()
    except KeyboardInterrupt:
        print("\n\nBenchmark interrupted by user")
        sys.exit(1)


if __name__ == "__main__":
    main()
