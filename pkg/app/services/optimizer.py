"""
Adam Optimizer and Gradient Clipping

Bias-corrected Adam over named parameters. Gradients are read, never
cleared: callers zero them between steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.tensor import Tensor
from app.exceptions import NumericError

NamedTensors = Sequence[Tuple[str, Tensor]]


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the step counter and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def _gradients(params: NamedTensors, grads: Optional[Mapping[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    collected = {}
    for name, tensor in params:
        grad = grads.get(name) if grads is not None else tensor.grad
        if grad is None:
            grad = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        collected[name] = grad
    return collected


def adam_step(state: AdamState, params: NamedTensors, grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """
    One bias-corrected Adam update of every parameter, in place.

    Args:
        state: Moments and hyperparameters (updated)
        params: (name, tensor) pairs
        grads: Optional gradients by name; defaults to each tensor's .grad
            (missing gradients count as zero)

    Raises:
        NumericError: If any gradient is non-finite (no parameter is touched)
    """
    gradients = _gradients(params, grads)
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step

    for name, tensor in params:
        grad = gradients[name]
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first[name] = m
        state.second[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def global_grad_norm(tensors: Sequence[Tensor]) -> float:
    total = 0.0
    for tensor in tensors:
        if tensor.grad is not None:
            total += float(np.sum(tensor.grad * tensor.grad))
    return math.sqrt(total)


def clip_grad_norm(tensors: Sequence[Tensor], max_norm: float) -> float:
    """
    Scale gradients so their global L2 norm is at most max_norm.

    Returns:
        The norm before clipping
    """
    norm = global_grad_norm(tensors)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for tensor in tensors:
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm


class AdamOptimizer:
    """Adam bound to a fixed list of named parameters."""

    def __init__(self, params: NamedTensors, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for _, tensor in self.params:
            tensor.grad = None
