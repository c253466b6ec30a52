"""Brute-force references for the gate gradient estimator.

Everything here enumerates all 2^n gate configurations, so it only works
for a handful of gates. That is enough to certify that the ARM estimate is
unbiased before trusting it inside the training loop.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import sigmoid_array
from .gating import arm_gradient_term, arm_masks

MAX_ENUMERATION_GATES = 12


@dataclass
class TestFunction:
    """Deterministic F(nu) over binary gate vectors; ``eval`` takes rows of masks."""

    __test__ = False  # not a pytest class

    n: int
    eval: Callable[[np.ndarray], np.ndarray]

    def __call__(self, nu: np.ndarray) -> np.ndarray:
        return self.eval(np.atleast_2d(nu))


def quadratic_function(n: int, rng: np.random.Generator) -> TestFunction:
    """F(nu) = c + b.nu + nu^T A nu with Gaussian coefficients."""
    a = rng.standard_normal((n, n))
    a = 0.5 * (a + a.T)
    b = rng.standard_normal(n)
    c = rng.standard_normal()

    def f(nu: np.ndarray) -> np.ndarray:
        return c + nu @ b + np.einsum("si,ij,sj->s", nu, a, nu)

    return TestFunction(n, f)


def _configurations(n: int) -> np.ndarray:
    if n > MAX_ENUMERATION_GATES:
        raise ValueError(f"refusing to enumerate 2^{n} gate configurations (limit n <= {MAX_ENUMERATION_GATES})")
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def _weights(configs: np.ndarray, gamma, k: float) -> tuple[np.ndarray, np.ndarray]:
    p = sigmoid_array(k * np.asarray(gamma, dtype=np.float64))
    w = np.prod(np.where(configs == 1.0, p, 1.0 - p), axis=1)
    return w, p


def exact_expected_value(F: TestFunction, gamma, k: float) -> float:
    configs = _configurations(F.n)
    w, _ = _weights(configs, gamma, k)
    return float(w @ F(configs))


def exact_gradient(F: TestFunction, gamma, k: float) -> np.ndarray:
    """d/dgamma of E_{nu ~ Ber(sigmoid(k gamma))}[F(nu)].

    d/dgamma_j of the product weight is weight * k * (nu_j - p_j).
    """
    configs = _configurations(F.n)
    w, p = _weights(configs, gamma, k)
    return k * ((w * F(configs)) @ (configs - p))


@dataclass
class MonteCarloResult:
    mean: np.ndarray
    sem: np.ndarray
    samples: int


def _streaming_stats(draw: Callable[[int], np.ndarray], samples: int, chunk: int) -> MonteCarloResult:
    total = None
    total_sq = None
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = draw(m)
        s, sq = x.sum(axis=0), (x * x).sum(axis=0)
        total = s if total is None else total + s
        total_sq = sq if total_sq is None else total_sq + sq
        done += m
    mean = total / samples
    var = np.maximum(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return MonteCarloResult(mean=mean, sem=np.sqrt(var / samples), samples=samples)


def monte_carlo_arm(
    F: TestFunction, gamma, k: float, samples: int, rng: np.random.Generator, chunk: int = 50_000
) -> MonteCarloResult:
    """Mean and standard error of k (F(nu1) - F(nu2)) (u - 1/2) over fresh draws."""
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    gamma = np.asarray(gamma, dtype=np.float64)

    def draw(m: int) -> np.ndarray:
        u = rng.random((m, F.n))
        nu1, nu2 = arm_masks(u, gamma, k)
        return arm_gradient_term(F(nu1), F(nu2), u, k, 1.0)

    return _streaming_stats(draw, samples, chunk)


def monte_carlo_reinforce(
    F: TestFunction, gamma, k: float, samples: int, rng: np.random.Generator, chunk: int = 50_000
) -> MonteCarloResult:
    """Score-function baseline F(nu) k (nu - p), for variance comparison only."""
    gamma = np.asarray(gamma, dtype=np.float64)
    p = sigmoid_array(k * gamma)

    def draw(m: int) -> np.ndarray:
        nu = (rng.random((m, F.n)) < p).astype(np.float64)
        return F(nu)[:, None] * k * (nu - p)

    return _streaming_stats(draw, samples, chunk)


@dataclass
class TrialResult:
    n: int
    k: float
    gamma: np.ndarray
    exact: np.ndarray
    mc: MonteCarloResult
    reinforce_sem: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.mc.mean - self.exact) <= 3 * self.mc.sem))


@dataclass
class UnbiasednessReport:
    trials: list[TrialResult]
    seconds: float

    @property
    def pass_fraction(self) -> float:
        return sum(t.passed for t in self.trials) / len(self.trials)

    def passed(self, threshold: float = 0.95) -> bool:
        return self.pass_fraction >= threshold

    def table(self) -> str:
        lines = [f"{'trial':>5} {'comp':>4} {'n':>2} {'k':>3} {'exact':>12} {'mc_mean':>12} {'sem':>10} {'rf_sem':>10}  result"]
        for i, t in enumerate(self.trials):
            for j in range(t.n):
                ok = abs(t.mc.mean[j] - t.exact[j]) <= 3 * t.mc.sem[j]
                lines.append(
                    f"{i:>5} {j:>4} {t.n:>2} {t.k:>3g} {t.exact[j]:>12.6f} {t.mc.mean[j]:>12.6f} "
                    f"{t.mc.sem[j]:>10.2e} {t.reinforce_sem[j]:>10.2e}  {'pass' if ok else 'FAIL'}"
                )
        lines.append(
            f"trials passing: {sum(t.passed for t in self.trials)}/{len(self.trials)} "
            f"({self.pass_fraction:.0%}) in {self.seconds:.1f}s"
        )
        return "\n".join(lines)


def unbiasedness_suite(
    trials: int = 50, samples: int = 200_000, seed: int = 0, ks: tuple[float, ...] = (1.0, 7.0)
) -> UnbiasednessReport:
    """Random quadratic objectives, n in 1..4, gamma ~ U[-2, 2]^n, alternating k."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = []
    for i in range(trials):
        n = 1 + i % 4
        k = ks[(i // 4) % len(ks)]
        F = quadratic_function(n, rng)
        gamma = rng.uniform(-2.0, 2.0, size=n)
        exact = exact_gradient(F, gamma, k)
        mc = monte_carlo_arm(F, gamma, k, samples, rng)
        rf = monte_carlo_reinforce(F, gamma, k, samples, rng)
        results.append(TrialResult(n=n, k=k, gamma=gamma, exact=exact, mc=mc, reinforce_sem=rf.sem))
    return UnbiasednessReport(results, time.perf_counter() - start)
