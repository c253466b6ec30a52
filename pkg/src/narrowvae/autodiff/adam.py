"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.parameter = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """Update ``params`` in place from ``grads``; a missing gradient counts as zero.

    Moments are keyed by parameter name, so names must be unique.
    """
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        # A finite sum rules out inf/nan cheaply; fall back to the full scan otherwise.
        if g is not None and not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(p.name or f"#{i}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        key = p.name or f"#{i}"
        m = state.first_moment.get(key)
        if m is None:
            m = state.first_moment[key] = np.zeros_like(p.data)
            state.second_moment[key] = np.zeros_like(p.data)
        v = state.second_moment[key]
        if m.shape != p.shape:
            raise ValueError(f"adam_step: moment shape {m.shape} != parameter shape {p.shape} for {key!r}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {key!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        g2 = g * g
        g2 *= 1.0 - state.beta2
        v += g2
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(bc2)
        denom += state.epsilon
        update = m / denom
        update *= state.learning_rate / bc1
        p.data -= update.astype(p.dtype, copy=False)
    return state


class Adam:
    """Convenience wrapper that steps a fixed parameter list from ``.grad``."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names) or None in names:
            raise ValueError("Adam: every parameter needs a unique name")
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
