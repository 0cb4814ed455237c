"""Grader services: seeding, optimization, training, checkpoints, evaluation, grading and gradient checks."""

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import accuracy, auc, evaluate_model, lr_baseline_fit, lr_baseline_predict
from .grading_service import GradingService
from .gradcheck_service import run_gradcheck_suite
from .optimizer import AdamOptimizer, AdamState, adam_step, clip_grad_norm
from .seeding import RngStreams, set_global_seed
from .training_service import TrainingService, fit

__all__ = [
    "AdamOptimizer",
    "AdamState",
    "GradingService",
    "RngStreams",
    "TrainingService",
    "accuracy",
    "adam_step",
    "auc",
    "clip_grad_norm",
    "evaluate_model",
    "fit",
    "load_checkpoint",
    "lr_baseline_fit",
    "lr_baseline_predict",
    "run_gradcheck_suite",
    "save_checkpoint",
    "set_global_seed",
]
