import math

import numpy as np
import pytest

from narrowvae.autodiff import AdamState, Tensor, backward
from narrowvae.gating import GateVector
from narrowvae.geco import (
    GecoState,
    TrainingDivergedError,
    assemble_loss,
    constraint,
    effective_lambda,
    lagrangian,
    make_lambda,
    masked_kl,
    smoothed_constraint,
    train_step,
    update_moving_average,
)
from narrowvae.vae import VaeModel
from narrowvae.verify import full_loss_gradient_error, multiplier_trace

LAMBDA_AT_ONE = math.log1p(math.e) ** 2  # oracle for softplus(1)^2


def tiny(seed=0, d=16, n=4, tau=0.0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    model = VaeModel(d, n, (8, 6), rng=rng, dtype=dtype)
    g = GateVector.create(n, dtype=dtype)
    state = GecoState(tau=tau, lambda_raw=make_lambda(1.0, dtype))
    x = rng.random((8, d))
    return model, g, state, x, rng


def test_effective_lambda_examples():
    assert effective_lambda(GecoState(tau=1.0)).item() == pytest.approx(LAMBDA_AT_ONE, abs=1e-5)
    assert LAMBDA_AT_ONE == pytest.approx(1.7246562599032103, abs=1e-15)
    assert effective_lambda(GecoState(tau=1.0, lambda_raw=make_lambda(100.0))).item() == 5.0
    assert effective_lambda(GecoState(tau=1.0, lambda_raw=make_lambda(-20.0))).item() == np.float32(1e-5)


def test_effective_lambda_gradient_vanishes_at_clamps():
    for value in (100.0, -20.0):
        state = GecoState(tau=1.0, lambda_raw=make_lambda(value, np.float64))
        backward(effective_lambda(state))
        assert state.lambda_raw.grad == 0.0
    state = GecoState(tau=1.0, lambda_raw=make_lambda(1.0, np.float64))
    backward(effective_lambda(state))
    sp, sig = math.log1p(math.e), 1 / (1 + math.exp(-1))
    assert state.lambda_raw.grad == pytest.approx(2 * sp * sig, rel=1e-12)


def test_state_validation():
    with pytest.raises(ValueError):
        GecoState(tau=-1.0)
    with pytest.raises(ValueError):
        GecoState(tau=1.0, alpha=1.0)
    with pytest.raises(ValueError):
        GecoState(tau=1.0, lambda_min=6.0)


def test_constraint_examples():
    assert constraint(25.0, 20.0) == 5.0
    assert constraint(20.0, 20.0) == 0.0
    assert constraint(10.0, 20.0) == -10.0


def test_moving_average_examples():
    state = GecoState(tau=1.0)
    assert update_moving_average(state, 4.2) == 4.2
    state = GecoState(tau=1.0, alpha=0.99, c_ma=0.0, batch_index=3)
    assert update_moving_average(state, 1.0) == pytest.approx(0.01, abs=1e-15)
    # batch 0 always reseeds, even with a stale average
    state = GecoState(tau=1.0, c_ma=123.0, batch_index=0)
    assert update_moving_average(state, -2.0) == -2.0


def test_smoothed_constraint_value_and_gradient():
    x = Tensor(np.array(np.sqrt(5.0)), requires_grad=True)
    c = x * x
    state = GecoState(tau=1.0, c_ma=3.0)
    c_prime = smoothed_constraint(c, state)
    assert c_prime.item() == pytest.approx(3.0, abs=1e-12)
    backward(c_prime)
    assert x.grad == pytest.approx(2 * np.sqrt(5.0))


def test_masked_kl_normalization():
    kl = Tensor(np.arange(20.0).reshape(2, 10))
    full = masked_kl(kl, np.ones(10)).item()
    assert full == pytest.approx(np.mean(np.sum(kl.data, axis=1) / 10))
    mask = np.zeros(10)
    mask[[1, 4]] = 1
    assert masked_kl(kl, mask).item() == pytest.approx(np.mean((kl.data[:, 1] + kl.data[:, 4]) / 2))
    assert masked_kl(kl, np.zeros(10)).item() == 0.0


def test_pre_hit_masks_are_open_and_arm_is_silent():
    model, g, state, x, rng = tiny(tau=0.0)
    parts = assemble_loss(x, model, g, state, rng)
    assert parts.u is None and parts.e1 == parts.e2
    assert not state.hit
    assert parts.metrics.hit_rate == 0.0
    # first batch: C' equals C
    assert state.c_ma == pytest.approx(parts.e2 - state.tau)


def test_l0_term_only_when_constraint_met():
    model, g, state, x, rng = tiny(tau=0.0)
    parts = assemble_loss(x, model, g, state, rng)
    backward(parts.loss)
    assert not state.hit
    assert g.gamma.grad is None or not np.any(g.gamma.grad)

    model, g, state, x, rng = tiny(tau=1e6)
    parts = assemble_loss(x, model, g, state, rng)
    assert state.hit and parts.metrics.hit_rate == 1.0
    backward(parts.loss)
    assert np.all(g.gamma.grad > 0)


def test_hit_is_sticky_and_masks_sampled_after_hit():
    model, g, state, x, rng = tiny(tau=1e6)
    adam = AdamState()
    train_step(x, model, g, state, adam, rng)
    assert state.hit
    state.tau = 0.0  # constraint violated from now on
    for _ in range(5):
        row = train_step(x, model, g, state, adam, rng)
        assert state.hit
        assert g.last_u is not None
        assert 1e-5 <= row.lambda_eff <= 5.0


def test_gamma_untouched_before_first_hit():
    model, g, state, x, rng = tiny(tau=0.0, dtype=np.float32)
    before = g.gamma.data.tobytes()
    adam = AdamState()
    for _ in range(50):
        train_step(x, model, g, state, adam, rng)
    assert not state.hit
    assert g.gamma.data.tobytes() == before


def test_loss_invariant_to_closed_dimensions():
    model, g, state, x, rng = tiny()
    noise = rng.standard_normal((x.shape[0], 4))
    nu2 = np.array([1.0, 0.0, 1.0, 1.0])
    lam = make_lambda(0.5, np.float64)

    def loss():
        return lagrangian(x, model, g, lam, nu2, noise, tau=2.0, ma_shift=0.3, include_l0=True).item()

    base = loss()
    head = model.encoder[-1]
    head.weight.data[:, 1] += rng.standard_normal(head.weight.shape[0])  # mu_1
    head.bias.data[1] += 3.0
    head.weight.data[:, 5] -= 0.7  # log-variance of dim 1
    assert loss() == base
    head.weight.data[:, 0] += 0.5  # an open dimension does matter
    assert loss() != base


def test_multiplier_sign_probe():
    for tau, direction in ((0.0, 1), (1e6, -1)):
        model, g, state, x, rng = tiny(tau=tau)
        adam = AdamState()
        start = state.lambda_raw.item()
        train_step(x, model, g, state, adam, rng)
        train_step(x, model, g, state, adam, rng)
        assert np.sign(state.lambda_raw.item() - start) == direction


def test_multiplier_saturates_at_upper_clamp():
    trace = multiplier_trace(+1.0, 2000)
    first = int(np.argmax(trace >= 5.0))
    assert trace[first] == 5.0 and first < 2000
    assert np.all(trace[first:] == 5.0)


def test_multiplier_decays_to_lower_clamp():
    trace = multiplier_trace(-1.0, 30_000)
    floor = np.float32(1e-5)
    first = int(np.argmax(trace <= floor))
    assert trace[first] == floor
    assert np.all(trace[first:] == floor)


def test_full_loss_gradient_check():
    assert full_loss_gradient_error() < 1e-6


def test_non_finite_loss_aborts_with_diagnostics():
    model, g, state, x, rng = tiny()
    model.decoder[-1].bias.data[:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        assemble_loss(x, model, g, state, rng)
    assert {"lambda_eff", "C", "gate_mass"} <= set(info.value.diagnostics)


def test_metrics_row_is_finite():
    model, g, state, x, rng = tiny(tau=30.0)
    adam = AdamState()
    for i in range(10):
        row = train_step(x, model, g, state, adam, rng)
        assert row.batch == i
        assert all(np.isfinite(v) for v in row.as_dict().values())
        assert 0.0 <= row.hit_rate <= 1.0
        assert row.open_gates == int(np.sum(g.gamma.data > 0))
