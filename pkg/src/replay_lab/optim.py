"""Plain SGD and Adam over named parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ContractError


@dataclass
class OptimizerState:
    """Per-parameter moment buffers plus the shared step counter."""

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: dict[str, Tensor], kind: str = "adam",
                   lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state = OptimizerState(kind=kind, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    if kind == "adam":
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
    return state


def optimizer_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """Apply one update from the accumulated grads; missing grads mean no-op.

    ``data`` is replaced with a fresh array rather than mutated, so tensors
    captured by an earlier forward pass keep their old values.
    """
    state.step += 1
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ContractError(f"grad shape {p.grad.shape} != param shape "
                                f"{p.data.shape} for {name!r}")
        if state.kind == "sgd":
            p.data = p.data - state.lr * p.grad
        else:
            m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * p.grad
            v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * p.grad ** 2
            mhat = m / (1 - state.beta1 ** state.step)
            vhat = v / (1 - state.beta2 ** state.step)
            p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
