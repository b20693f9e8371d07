"""Adam with L2 (or decoupled) weight decay, and per-epoch cosine annealing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr: float, wd: float = 0.0,
              decoupled: bool = False) -> None:
    """One in-place Adam update of the arrays in ``params``.

    With ``decoupled=False`` the decay is classic L2: ``wd * w`` is added to the gradient.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if any(g is None for g in grads):
        raise RuntimeError("adam_step: a parameter has no gradient (was backward run?)")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for w, g, m, v in zip(params, grads, state.m, state.v):
        if wd and not decoupled:
            g = g + wd * w
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if wd and decoupled:
            w -= lr * wd * w
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params, lr: float = 1e-4, weight_decay: float = 0.0, decoupled: bool = False,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.weight_decay, self.decoupled)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(epoch: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    return lr_min + (lr0 - lr_min) * 0.5 * (1 + math.cos(math.pi * epoch / total))
