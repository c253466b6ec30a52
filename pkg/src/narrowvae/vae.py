"""Dense Gaussian VAE: encoder, reparameterized sampling, KL and reconstruction error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, exp, expm1, leaky_relu, sigmoid, sigmoid_array, square, sum_, take

LEAKY_SLOPE = 0.02
RECONSTRUCTION_METRICS = ("sse", "mse")


@dataclass
class LatentPosterior:
    mu: Tensor
    log_var: Tensor


class DenseLayer:
    def __init__(self, fan_in: int, fan_out: int, name: str, rng: np.random.Generator | None, dtype=np.float32):
        if rng is None:
            w = np.zeros((fan_in, fan_out), dtype=dtype)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class VaeModel:
    """Encoder d -> hidden... -> 2n and a mirrored decoder n -> ...hidden -> d.

    Hidden layers use a leaky rectifier; the decoder ends in a sigmoid so
    reconstructions are pixel intensities in (0, 1). Passing ``rng=None``
    builds an all-zero network (posterior equals the prior, decoder outputs 0.5).
    """

    def __init__(
        self,
        input_dim: int,
        latent_dim: int,
        hidden_layout: Sequence[int] = (256, 128),
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        if input_dim < 1 or latent_dim < 1:
            raise ValueError("input_dim and latent_dim must be positive")
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.hidden_layout = tuple(int(h) for h in hidden_layout)
        self.dtype = np.dtype(dtype)

        widths = [input_dim, *self.hidden_layout, 2 * latent_dim]
        self.encoder = [
            DenseLayer(a, b, f"encoder.{i}", rng, dtype) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]
        widths = [latent_dim, *reversed(self.hidden_layout), input_dim]
        self.decoder = [
            DenseLayer(a, b, f"decoder.{i}", rng, dtype) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    @property
    def encoder_params(self) -> list[Tensor]:
        return [p for layer in self.encoder for p in layer.parameters()]

    @property
    def decoder_params(self) -> list[Tensor]:
        return [p for layer in self.decoder for p in layer.parameters()]

    def parameters(self) -> list[Tensor]:
        return self.encoder_params + self.decoder_params


def _run(layers: list[DenseLayer], h: Tensor) -> Tensor:
    for i, layer in enumerate(layers):
        h = layer(h)
        if i < len(layers) - 1:
            h = leaky_relu(h, LEAKY_SLOPE)
    return h


def encode(x, model: VaeModel) -> LatentPosterior:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.dtype))
    if x.data.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError("encode", x.shape, (-1, model.input_dim))
    if x.shape[0] == 0:
        raise ValueError("encode: empty batch")
    out = _run(model.encoder, x)
    n = model.latent_dim
    return LatentPosterior(mu=take(out, (slice(None), slice(0, n))), log_var=take(out, (slice(None), slice(n, 2 * n))))


def reparameterize(post: LatentPosterior, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """z = mu + exp(log_var / 2) * eps with eps ~ N(0, I).

    ``noise`` fixes eps explicitly (used for deterministic gradient checks).
    """
    if noise is None:
        if rng is None:
            raise ValueError("reparameterize needs an rng or explicit noise")
        noise = rng.standard_normal(post.mu.shape)
    noise = np.asarray(noise, dtype=post.mu.dtype)
    return post.mu + exp(post.log_var * 0.5) * noise


def kl_elementwise(post: LatentPosterior) -> Tensor:
    """Per-dimension KL(q(z|x) || N(0, I)); shape (batch, n).

    Evaluates -(1 + w - e^w - mu^2) / 2 as ((e^w - 1 - w) + mu^2) / 2 so the
    result cannot round below zero near w = 0.
    """
    w = post.log_var
    return (expm1(w) - w + square(post.mu)) * 0.5


def decode(z_gated, model: VaeModel) -> Tensor:
    z = z_gated if isinstance(z_gated, Tensor) else Tensor(np.asarray(z_gated, dtype=model.dtype))
    if z.data.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ShapeError("decode", z.shape, (-1, model.latent_dim))
    return sigmoid(_run(model.decoder, z))


def reconstruction_error(x, x_rec, metric: str = "sse") -> Tensor:
    """Per-sample squared error: summed over pixels ("sse") or averaged ("mse")."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=x_rec.dtype if isinstance(x_rec, Tensor) else None))
    x_rec = x_rec if isinstance(x_rec, Tensor) else Tensor(x_rec)
    if x.shape != x_rec.shape:
        raise ShapeError("reconstruction_error", x.shape, x_rec.shape)
    if metric not in RECONSTRUCTION_METRICS:
        raise ValueError(f"unknown reconstruction metric {metric!r}")
    err = sum_(square(x_rec - x), axis=-1)
    if metric == "mse":
        err = err * (1.0 / x.shape[-1])
    return err


# Graph-free forward passes for evaluation and for the ARM side pass.


def _run_array(layers: list[DenseLayer], h: np.ndarray) -> np.ndarray:
    for i, layer in enumerate(layers):
        h = h @ layer.weight.data + layer.bias.data
        if i < len(layers) - 1:
            h = np.where(h > 0, h, LEAKY_SLOPE * h)
    return h


def encode_array(x: np.ndarray, model: VaeModel) -> tuple[np.ndarray, np.ndarray]:
    out = _run_array(model.encoder, np.asarray(x, dtype=model.dtype))
    n = model.latent_dim
    return out[:, :n], out[:, n:]


def decode_array(z: np.ndarray, model: VaeModel) -> np.ndarray:
    return sigmoid_array(_run_array(model.decoder, np.asarray(z, dtype=model.dtype)))
