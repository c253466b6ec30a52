import numpy as np
import pytest

from narrowvae.autodiff import backward
from narrowvae.gating import (
    GAMMA_INIT,
    GATE_SCALE,
    GateVector,
    arm_gradient_term,
    arm_masks,
    hard_mask,
    open_gate_surrogate,
    sample_arm_masks,
)


def gates(values, k=GATE_SCALE):
    g = GateVector.create(len(values), k=k, dtype=np.float64)
    g.gamma.data[:] = values
    return g


def test_initial_open_probability():
    g = GateVector.create(10)
    assert (GAMMA_INIT, GATE_SCALE) == (0.42, 7.0)
    np.testing.assert_allclose(g.open_probability, 0.95, atol=0.002)
    assert np.all((g.open_probability > 0) & (g.open_probability < 1))


def test_create_rejects_bad_arguments():
    with pytest.raises(ValueError):
        GateVector.create(0)
    with pytest.raises(ValueError):
        GateVector.create(3, k=0.0)


def test_saturated_gates_are_always_open():
    g = gates([50.0] * 6)
    rng = np.random.default_rng(0)
    for _ in range(100):
        nu1, nu2, _ = sample_arm_masks(g, rng)
        assert nu1.all() and nu2.all()


def test_zero_gamma_masks_are_complements():
    g = gates([0.0] * 8)
    rng = np.random.default_rng(1)
    for _ in range(100):
        nu1, nu2, u = sample_arm_masks(g, rng)
        np.testing.assert_array_equal(nu1, 1 - nu2)
        np.testing.assert_array_equal(nu2, u < 0.5)
        np.testing.assert_array_equal(g.last_u, u)


def test_mask_marginals_match_open_probability():
    g = gates([-0.3, 0.0, 0.1, 0.42], k=GATE_SCALE)
    rng = np.random.default_rng(2)
    draws = 100_000
    u = rng.random((draws, 4))
    nu1, nu2 = arm_masks(u, g.gamma.data, g.k)
    p = g.open_probability
    se = np.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(nu2.mean(axis=0) - p) <= 3 * se)
    assert np.all(np.abs(nu1.mean(axis=0) - p) <= 3 * se)


def test_surrogate_examples():
    assert open_gate_surrogate(gates([0.0] * 10)).item() == 5.0
    # oracle: 10 * sigmoid(7 * 0.42)
    assert open_gate_surrogate(GateVector.create(10, dtype=np.float64)).item() == pytest.approx(9.497887268097335, abs=1e-12)
    assert open_gate_surrogate(gates([-200.0] * 10)).item() == pytest.approx(0.0, abs=1e-300)


def test_surrogate_increases_in_every_gamma():
    g = gates(np.linspace(-1, 1, 5))
    backward(open_gate_surrogate(g))
    assert np.all(g.gamma.grad > 0)
    base = open_gate_surrogate(g).item()
    for j in range(5):
        h = gates(g.gamma.data.copy())
        h.gamma.data[j] += 0.01
        assert open_gate_surrogate(h).item() > base


def test_arm_term_examples():
    np.testing.assert_array_equal(arm_gradient_term(3.0, 3.0, np.array([0.1, 0.9]), 7, 1.0), [0.0, 0.0])
    # oracle: 1 * 7 * 2 * (0.75 - 0.5)
    np.testing.assert_allclose(arm_gradient_term(2.0, 0.0, np.array([0.75]), 7, 1.0), [3.5])
    np.testing.assert_allclose(arm_gradient_term(2.0, 0.0, np.array([0.75]), 7, 3.0), [10.5])
    rows = arm_gradient_term(np.array([2.0, 1.0]), np.array([0.0, 0.0]), np.array([[0.75], [0.25]]), 7, 1.0)
    np.testing.assert_allclose(rows, [[3.5], [-1.75]])


def test_arm_expectation_closed_form():
    # E_u[(1{u>1-p} - 1{u<p}) (u - 1/2)] = p (1 - p)
    u = (np.arange(1_000_000) + 0.5) / 1_000_000
    for gamma in [0.0, 0.8, -1.3]:
        nu1, nu2 = arm_masks(u[:, None], np.array([gamma]), 1.0)
        est = arm_gradient_term(nu1[:, 0], nu2[:, 0], u[:, None], 1.0, 1.0).mean()
        p = 1 / (1 + np.exp(-gamma))
        assert est == pytest.approx(p * (1 - p), abs=1e-5)


def test_hard_mask_examples():
    np.testing.assert_array_equal(hard_mask(gates([-1.0, 0.42, 3.0])), [0, 1, 1])
    np.testing.assert_array_equal(hard_mask(gates([0.0, 1e-30, -1e-30])), [0, 1, 0])
    assert set(np.unique(hard_mask(gates(np.random.default_rng(0).normal(size=50))))) <= {0.0, 1.0}


@pytest.mark.parametrize("k", [0.01, 1.0, 7.0, 1e4])
def test_hard_mask_ignores_k(k):
    values = np.random.default_rng(3).normal(size=20)
    np.testing.assert_array_equal(hard_mask(gates(values, k)), hard_mask(gates(values, 7.0)))
