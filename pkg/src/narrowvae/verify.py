"""Self-checks run by ``narrowvae verify``: estimator unbiasedness and gradient integrity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, backward, finite_difference_check
from .gating import GateVector
from .geco import GecoState, ascend_multiplier, effective_lambda, lagrangian, make_lambda
from .oracle import TestFunction, exact_gradient, monte_carlo_arm, unbiasedness_suite
from .vae import LatentPosterior, VaeModel, decode, encode, kl_elementwise, reconstruction_error, reparameterize

GRADIENT_TOLERANCE = 1e-6


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} (limit {self.limit:g})"


def spot_check(samples: int = 200_000, seed: int = 1) -> tuple[float, float, float]:
    """F(nu) = nu for one gate at gamma = 0, k = 1: returns (exact, mc mean, sem)."""
    F = TestFunction(1, lambda nu: nu[:, 0])
    exact = float(exact_gradient(F, [0.0], 1.0)[0])
    mc = monte_carlo_arm(F, [0.0], 1.0, samples, np.random.default_rng(seed))
    return exact, float(mc.mean[0]), float(mc.sem[0])


def tiny_problem(seed: int = 0, d: int = 16, n: int = 4, batch: int = 5, hidden=(8, 6)):
    rng = np.random.default_rng(seed)
    model = VaeModel(d, n, hidden, rng=rng, dtype=np.float64)
    for p in model.parameters():
        p.data += 0.1 * rng.standard_normal(p.shape)  # non-zero biases too
    x = rng.uniform(0.0, 1.0, size=(batch, d))
    noise = rng.standard_normal((batch, n))
    return model, x, noise, rng


def kl_gradient_error(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    mu = Tensor(rng.standard_normal((6, 4)), requires_grad=True, name="mu")
    w = Tensor(rng.standard_normal((6, 4)), requires_grad=True, name="log_var")
    return finite_difference_check(lambda: kl_elementwise(LatentPosterior(mu, w)).sum(), [mu, w])


def reconstruction_gradient_error(seed: int = 0) -> float:
    model, x, noise, _ = tiny_problem(seed)

    def f():
        z = reparameterize(encode(x, model), noise=noise)
        return reconstruction_error(x, decode(z, model)).mean()

    return finite_difference_check(f, model.parameters())


def full_loss_gradient_error(seed: int = 0) -> float:
    model, x, noise, rng = tiny_problem(seed)
    n = model.latent_dim
    gates = GateVector.create(n, dtype=np.float64)
    gates.gamma.data = rng.uniform(-1.0, 1.0, n)
    lam = make_lambda(0.3, np.float64)
    nu2 = np.array([1.0, 0.0, 1.0, 1.0])

    def f():
        return lagrangian(x, model, gates, lam, nu2, noise, tau=2.0, ma_shift=-0.7, include_l0=True)

    return finite_difference_check(f, [*model.parameters(), gates.gamma, lam])


def multiplier_trace(c_prime: float, steps: int, lambda_init: float = 1.0) -> np.ndarray:
    """lambda' after each of ``steps`` updates with the smoothed constraint pinned to ``c_prime``.

    Uses the training loop's own multiplier transform, ascent flip and Adam step.
    """
    state = GecoState(tau=0.0, lambda_raw=make_lambda(lambda_init))
    adam = AdamState()
    trace = np.empty(steps)
    for i in range(steps):
        state.lambda_raw.grad = None
        backward(effective_lambda(state) * c_prime)
        ascend_multiplier(state)
        adam_step([state.lambda_raw], [state.lambda_raw.grad], adam)
        trace[i] = effective_lambda(state).item()
    return trace


def gradient_suite() -> list[CheckResult]:
    checks = [
        ("element-wise KL", kl_gradient_error()),
        ("reconstruction error through reparameterize+decode", reconstruction_gradient_error()),
        ("assembled loss with frozen masks", full_loss_gradient_error()),
    ]
    return [CheckResult(name, err, GRADIENT_TOLERANCE, err < GRADIENT_TOLERANCE) for name, err in checks]


def run_all(trials: int = 50, samples: int = 200_000, seed: int = 0, out=print) -> bool:
    ok = True
    report = unbiasedness_suite(trials=trials, samples=samples, seed=seed)
    out("ARM unbiasedness (exact enumeration vs Monte Carlo)")
    out(report.table())
    passed = report.passed(0.95)
    out(f"{'PASS' if passed else 'FAIL'}  unbiasedness: {report.pass_fraction:.0%} of trials within 3 SEM (need 95%)")
    ok &= passed

    exact, mean, sem = spot_check(samples)
    passed = exact == 0.25 and abs(mean - exact) <= 3 * sem
    out(f"{'PASS' if passed else 'FAIL'}  spot check F(nu)=nu: exact {exact:.6f}, MC {mean:.6f} +/- {sem:.2e}")
    ok &= passed

    out("finite-difference gradient checks (float64)")
    for r in gradient_suite():
        out(r.line())
        ok &= r.passed
    return ok
