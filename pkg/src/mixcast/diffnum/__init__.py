"""Minimal differentiable numerics: tensors, a reverse-mode tape, and checks."""
from .check import FDReport, fd_check
from .tensor import (
    NonDifferentiableError,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    affine,
    as_tensor,
    concat,
    div,
    exp,
    getitem,
    hard_onehot,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    softplus,
    square,
    squared_l2,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
    where,
)


def grad(loss, params):
    """Populate ``p.grad`` for every parameter reachable from ``loss``.

    Gradients accumulate across calls; zero them with ``Parameter.zero_grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"grad needs a scalar loss, got shape {loss.shape}")
    loss.backward()
    return [p.grad for p in params]


__all__ = [
    "FDReport", "NonDifferentiableError", "NonFiniteError", "Parameter", "ShapeError",
    "Tensor", "add", "affine", "as_tensor", "concat", "div", "exp", "fd_check", "getitem",
    "grad", "hard_onehot", "log", "log_softmax", "matmul", "mean", "mul", "neg", "reshape",
    "sigmoid", "softmax", "softplus", "square", "squared_l2", "stack", "sub", "tanh", "transpose", "tsum",
    "where",
]
