"""Learnable Bernoulli gates over latent dimensions, trained with L0-ARM.

Gate ``j`` is open with probability ``sigmoid(k * gamma_j)``. Training draws
one uniform vector ``u`` per batch and builds two antithetic masks from it;
the difference of the two reconstruction errors gives the ARM gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, sigmoid, sigmoid_array, sum_

GAMMA_INIT = 0.42
GATE_SCALE = 7.0


@dataclass
class GateVector:
    gamma: Tensor
    k: float = GATE_SCALE
    last_u: np.ndarray | None = None

    @classmethod
    def create(cls, n: int, gamma_init: float = GAMMA_INIT, k: float = GATE_SCALE, dtype=np.float32) -> "GateVector":
        if n < 1:
            raise ValueError("gate vector needs at least one dimension")
        if k <= 0:
            raise ValueError("sigmoid scale k must be positive")
        gamma = Tensor(np.full(n, gamma_init, dtype=dtype), requires_grad=True, name="gamma")
        return cls(gamma=gamma, k=float(k))

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def open_probability(self) -> np.ndarray:
        return sigmoid_array(self.k * self.gamma.data.astype(np.float64))


def arm_masks(u: np.ndarray, gamma: np.ndarray, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Antithetic masks from uniforms ``u`` (any leading batch shape)."""
    kg = k * np.asarray(gamma, dtype=np.float64)
    nu1 = (u > sigmoid_array(-kg)).astype(np.float64)
    nu2 = (u < sigmoid_array(kg)).astype(np.float64)
    return nu1, nu2


def sample_arm_masks(g: GateVector, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u = rng.random(g.n)
    nu1, nu2 = arm_masks(u, g.gamma.data, g.k)
    g.last_u = u
    dtype = g.gamma.dtype
    return nu1.astype(dtype), nu2.astype(dtype), u


def open_gate_surrogate(g: GateVector) -> Tensor:
    """Smoothed L0 mass: sum_j sigmoid(k * gamma_j)."""
    return sum_(sigmoid(g.gamma * g.k))


def arm_gradient_term(e1, e2, u, k: float, lam: float) -> np.ndarray:
    """lam * k * (e1 - e2) * (u - 1/2), to be added to gamma's gradient.

    ``e1``/``e2`` may be arrays of per-draw losses paired with rows of ``u``.
    """
    diff = np.asarray(e1, dtype=np.float64) - np.asarray(e2, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return lam * k * diff[..., None] * (u - 0.5) if diff.ndim else lam * k * float(diff) * (u - 0.5)


def hard_mask(g: GateVector) -> np.ndarray:
    """Inference-time gates: closed iff sigmoid(k * gamma_j) <= 0.5, i.e. gamma_j <= 0."""
    return (g.gamma.data > 0).astype(g.gamma.dtype)
