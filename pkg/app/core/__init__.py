"""Numeric substrate: tensors, autodiff, gradient checks and neural layers."""

from app.core.tensor import Graph, Tensor, backward, no_grad, zero_grads
from app.core.gradcheck import grad_check, grad_check_many

__all__ = ["Graph", "Tensor", "backward", "no_grad", "zero_grads", "grad_check", "grad_check_many"]
