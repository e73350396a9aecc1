"""Gradient-descent optimizers: plain SGD, momentum SGD, Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class OptimizerState:
    learning_rate: float
    kind: str = "sgd"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.kind not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState) -> dict:
    """Return updated copies of ``params``; ``state`` buffers are updated in place.

    Raises :class:`NonFiniteError` before touching anything if a gradient
    holds NaN/Inf.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}; step aborted")
    state.step_count += 1
    lr = state.learning_rate
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if state.kind == "sgd":
            out[name] = p - lr * g
        elif state.kind == "momentum":
            v = state.buffers.get(name)
            v = g.copy() if v is None else state.momentum * v + g
            state.buffers[name] = v
            out[name] = p - lr * v
        else:
            m, v = state.buffers.get(name, (np.zeros_like(p), np.zeros_like(p)))
            m = state.beta1 * m + (1 - state.beta1) * g
            v = state.beta2 * v + (1 - state.beta2) * g * g
            state.buffers[name] = (m, v)
            t = state.step_count
            mhat = m / (1 - state.beta1 ** t)
            vhat = v / (1 - state.beta2 ** t)
            out[name] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


class Optimizer:
    """Applies :func:`sgd_step` to named tensors, honouring a trainable mask.

    Parameters outside the mask keep their data bit-for-bit; their
    gradients are discarded.
    """

    def __init__(self, params: Mapping[str, Tensor], state: OptimizerState, trainable=None):
        self.params = dict(params)
        self.state = state
        self.trainable = set(self.params) if trainable is None else set(trainable)

    def set_trainable(self, names) -> None:
        unknown = set(names) - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        self.trainable = set(names)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        names = [n for n in self.params if n in self.trainable and self.params[n].grad is not None]
        current = {n: self.params[n].data for n in names}
        grads = {n: self.params[n].grad for n in names}
        updated = sgd_step(current, grads, self.state)
        for n in names:
            self.params[n].data = updated[n]
        self.zero_grad()
