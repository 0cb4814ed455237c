"""
Finite-Difference Gradient Verification

Compares analytic gradients from backward() against central differences
(f(x + eps*e) - f(x - eps*e)) / (2*eps), one coordinate at a time.
"""

from typing import Callable, Optional, Sequence

import numpy as np

from app.core.tensor import Tensor, backward, no_grad

RELATIVE_FLOOR = 1e-8
# Differences below this are round-off in the central difference, not gradient errors
ABSOLUTE_TOLERANCE = 1e-8


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR, atol: float = 0.0) -> float:
    difference = abs(analytic - numeric)
    if difference <= atol:
        return 0.0
    return difference / max(abs(analytic), abs(numeric), floor)


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise ValueError(f"gradient check needs a scalar-valued function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def grad_check_many(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    atol: float = ABSOLUTE_TOLERANCE,
) -> float:
    """
    Maximum relative error between analytic and numeric gradients over several tensors.

    Args:
        f: Deterministic zero-argument function returning a scalar tensor;
            it must read the current values of `tensors`
        tensors: Tensors to differentiate with respect to
        eps: Central-difference step
        max_coords: If set, check at most this many coordinates per tensor,
            chosen with rng (or a fixed-seed generator)
        rng: Coordinate sampler
        atol: Coordinates whose analytic and numeric values differ by at most
            this much count as exact (gradients that are structurally zero)

    Returns:
        max over checked coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    saved = [(t.requires_grad, t.grad) for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None

    try:
        backward(f())
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        for t in tensors:
            t.grad = None

        sampler = rng if rng is not None else np.random.default_rng(0)
        worst = 0.0
        with no_grad():
            for tensor, grad in zip(tensors, analytic):
                tensor.data = np.ascontiguousarray(tensor.data)
                flat = tensor.data.reshape(-1)
                coords = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    coords = np.sort(sampler.choice(flat.size, size=max_coords, replace=False))
                for i in coords:
                    original = flat[i]
                    flat[i] = original + eps
                    upper = _scalar(f())
                    flat[i] = original - eps
                    lower = _scalar(f())
                    flat[i] = original
                    numeric = (upper - lower) / (2.0 * eps)
                    worst = max(worst, relative_error(float(grad.reshape(-1)[i]), numeric, atol=atol))
        return worst
    finally:
        for t, (requires_grad, grad) in zip(tensors, saved):
            t.requires_grad = requires_grad
            t.grad = grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """
    Maximum relative error of d f(x) / dx against central differences.

    Args:
        f: Deterministic function mapping x to a scalar tensor
        x: Point of evaluation (perturbed in place, restored afterwards)
        eps: Central-difference step

    Returns:
        Maximum relative error over all coordinates of x
    """
    return grad_check_many(lambda: f(x), [x], eps=eps)


def max_abs_gradient(f: Callable[[], Tensor], tensor: Tensor) -> float:
    """
    Largest |d f / d tensor| entry, for parameters whose gradient must vanish.

    Args:
        f: Deterministic zero-argument function returning a scalar tensor
        tensor: Tensor to differentiate with respect to

    Returns:
        max |gradient| (0.0 when f does not depend on tensor)
    """
    saved = (tensor.requires_grad, tensor.grad)
    tensor.requires_grad = True
    tensor.grad = None
    try:
        backward(f())
        return 0.0 if tensor.grad is None else float(np.max(np.abs(tensor.grad)))
    finally:
        tensor.requires_grad, tensor.grad = saved
