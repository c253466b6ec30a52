"""GECO-constrained VAE training with L0-ARM gates over the latent space.

One call to :func:`train_step` processes one batch:

* gates stay fully open until the reconstruction constraint is met once
  (the sticky ``hit`` flag); afterwards two antithetic masks are sampled;
* a single latent sample is decoded under both masks;
* the loss is ``lambda' * C' + mean-open-KL`` plus the smoothed L0 mass
  whenever the batch satisfies the constraint;
* after backprop, the ARM estimate is added to gamma's gradient and the
  multiplier's gradient is negated so Adam ascends on it.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, backward, clamp, softplus, square, stop_gradient, sum_
from .gating import GateVector, arm_gradient_term, hard_mask, open_gate_surrogate, sample_arm_masks
from .vae import VaeModel, decode, decode_array, encode, kl_elementwise, reconstruction_error, reparameterize

log = logging.getLogger(__name__)

METRICS_FIELDS = ("batch", "mse", "kl", "lambda_eff", "gate_mass", "open_gates", "hit_rate", "loss")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        detail = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({detail})")


@dataclass
class GecoState:
    tau: float
    alpha: float = 0.99
    lambda_min: float = 1e-5
    lambda_max: float = 5.0
    lambda_raw: Tensor = field(default=None)
    c_ma: float | None = None
    hit: bool = False
    batch_index: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tolerance tau must be non-negative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.lambda_raw is None:
            self.lambda_raw = make_lambda(1.0)

    @property
    def ma_error(self) -> float | None:
        """Moving average of the reconstruction error itself (c_ma + tau)."""
        return None if self.c_ma is None else self.c_ma + self.tau


def make_lambda(value: float = 1.0, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name="lambda")


@dataclass
class MetricsRow:
    batch: int
    mse: float
    kl: float
    lambda_eff: float
    gate_mass: float
    open_gates: int
    hit_rate: float
    loss: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossParts:
    loss: Tensor
    e1: float
    e2: float
    u: np.ndarray | None
    lambda_eff: float
    metrics: MetricsRow


def effective_lambda(state: GecoState) -> Tensor:
    """clamp(softplus(lambda)^2, lambda_min, lambda_max)."""
    return clamp(square(softplus(state.lambda_raw)), state.lambda_min, state.lambda_max)


def constraint(e2, tau: float):
    """C = E2 - tau; C <= 0 means the reconstruction bound holds."""
    return e2 - tau


def update_moving_average(state: GecoState, c_value: float) -> float:
    if state.c_ma is None or state.batch_index == 0:
        state.c_ma = float(c_value)
    else:
        state.c_ma = state.alpha * state.c_ma + (1.0 - state.alpha) * float(c_value)
    return state.c_ma


def smoothed_constraint(c: Tensor, state: GecoState) -> Tensor:
    """C + stop_gradient(c_ma - C): the moving-average value with C's gradient."""
    return c + stop_gradient(np.asarray(state.c_ma, dtype=c.dtype) - c.data)


def masked_kl(kl: Tensor, nu2: np.ndarray) -> Tensor:
    """Batch mean of the KL summed over open dims, divided by the open count."""
    open_count = float(np.sum(nu2))
    if open_count == 0:
        return Tensor(np.zeros((), dtype=kl.dtype))
    per_sample = sum_(kl * nu2.astype(kl.dtype), axis=-1) * (1.0 / open_count)
    return per_sample.mean()


def lagrangian(
    x: np.ndarray,
    model: VaeModel,
    gates: GateVector,
    lambda_raw: Tensor,
    nu2: np.ndarray,
    noise: np.ndarray,
    tau: float,
    ma_shift: float,
    include_l0: bool,
    lambda_bounds: tuple[float, float] = (1e-5, 5.0),
    metric: str = "sse",
) -> Tensor:
    """The assembled loss with every random quantity supplied explicitly.

    ``ma_shift`` is the constant that turns C into the moving-average value.
    Used to finite-difference check the full objective.
    """
    post = encode(x, model)
    z = reparameterize(post, noise=noise)
    e2 = reconstruction_error(x, decode(z * nu2, model), metric).mean()
    c_smooth = constraint(e2, tau) + ma_shift
    lam = clamp(square(softplus(lambda_raw)), *lambda_bounds)
    loss = lam * c_smooth + masked_kl(kl_elementwise(post), nu2)
    if include_l0:
        loss = loss + open_gate_surrogate(gates)
    return loss


def assemble_loss(
    x_batch: np.ndarray,
    model: VaeModel,
    gates: GateVector,
    state: GecoState,
    rng: np.random.Generator,
    metric: str = "sse",
) -> LossParts:
    """Build one batch's loss graph and advance the moving average and hit flag."""
    x = Tensor(np.asarray(x_batch, dtype=model.dtype))
    n = gates.n
    if state.hit:
        nu1, nu2, u = sample_arm_masks(gates, rng)
    else:
        nu1 = nu2 = np.ones(n, dtype=model.dtype)
        u = None

    post = encode(x, model)
    z = reparameterize(post, rng)
    per_sample_e2 = reconstruction_error(x, decode(z * nu2, model), metric)
    e2 = per_sample_e2.mean()
    e2_value = e2.item()
    if u is None or np.array_equal(nu1, nu2):
        e1_value = e2_value
    else:
        x1 = decode_array(z.data * nu1, model)
        diff = x1 - x.data
        e1_value = float(np.mean(np.sum(diff * diff, axis=-1) / (x.shape[-1] if metric == "mse" else 1)))

    c = constraint(e2, state.tau)
    c_value = c.item()
    update_moving_average(state, c_value)
    c_smooth = smoothed_constraint(c, state)
    lam = effective_lambda(state)

    kl_term = masked_kl(kl_elementwise(post), nu2)
    loss = lam * c_smooth + kl_term
    surrogate = open_gate_surrogate(gates)
    if c_value <= 0:
        loss = loss + surrogate
        state.hit = True

    hit_rate = float(np.mean(per_sample_e2.data - state.tau <= 0))
    row = MetricsRow(
        batch=state.batch_index,
        mse=e2_value,
        kl=kl_term.item(),
        lambda_eff=lam.item(),
        gate_mass=surrogate.item(),
        open_gates=int(hard_mask(gates).sum()),
        hit_rate=hit_rate,
        loss=loss.item(),
    )
    if not np.isfinite(row.loss):
        raise TrainingDivergedError(
            "non-finite loss",
            {"batch": state.batch_index, "lambda_eff": row.lambda_eff, "C": c_value, "gate_mass": row.gate_mass},
        )
    return LossParts(loss=loss, e1=e1_value, e2=e2_value, u=u, lambda_eff=row.lambda_eff, metrics=row)


def ascend_multiplier(state: GecoState) -> None:
    """Negate lambda's gradient so a descent optimizer performs ascent on it.

    The multiplier then grows while the constraint is violated.
    """
    if state.lambda_raw.grad is not None:
        state.lambda_raw.grad = -state.lambda_raw.grad


def parameter_list(model: VaeModel, gates: GateVector, state: GecoState) -> list[Tensor]:
    return [*model.parameters(), gates.gamma, state.lambda_raw]


def train_step(
    x_batch: np.ndarray,
    model: VaeModel,
    gates: GateVector,
    state: GecoState,
    adam: AdamState,
    rng: np.random.Generator,
    metric: str = "sse",
) -> MetricsRow:
    """One optimization step over theta, phi, gamma and lambda."""
    params = parameter_list(model, gates, state)
    for p in params:
        p.grad = None
    parts = assemble_loss(x_batch, model, gates, state, rng, metric)
    backward(parts.loss)

    if parts.u is not None:
        arm = arm_gradient_term(parts.e1, parts.e2, parts.u, gates.k, parts.lambda_eff).astype(gates.gamma.dtype)
        gates.gamma.grad = arm if gates.gamma.grad is None else gates.gamma.grad + arm
    ascend_multiplier(state)

    adam_step(params, [p.grad for p in params], adam)
    state.batch_index += 1
    return parts.metrics
