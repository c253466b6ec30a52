import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowvae.autodiff import ShapeError, Tensor, backward, finite_difference_check, mean
from narrowvae.vae import (
    LatentPosterior,
    VaeModel,
    decode,
    decode_array,
    encode,
    encode_array,
    kl_elementwise,
    reconstruction_error,
    reparameterize,
)
from narrowvae.verify import kl_gradient_error, reconstruction_gradient_error


def posterior(mu, w):
    return LatentPosterior(Tensor(np.atleast_2d(mu).astype(float)), Tensor(np.atleast_2d(w).astype(float)))


def test_zero_model_is_prior_and_grey():
    model = VaeModel(784, 10)
    x = np.random.default_rng(0).random((3, 784))
    post = encode(x, model)
    assert post.mu.shape == (3, 10) and post.log_var.shape == (3, 10)
    assert not post.mu.data.any() and not post.log_var.data.any()
    out = decode(np.ones((3, 10)), model)
    assert out.shape == (3, 784)
    np.testing.assert_array_equal(out.data, 0.5)


def test_layer_layout():
    model = VaeModel(784, 16, rng=np.random.default_rng(0))
    enc = [p.shape for p in model.encoder_params if p.name.endswith("weight")]
    dec = [p.shape for p in model.decoder_params if p.name.endswith("weight")]
    assert enc == [(784, 256), (256, 128), (128, 32)]
    assert dec == [(16, 128), (128, 256), (256, 784)]
    assert len({p.name for p in model.parameters()}) == len(model.parameters())


def test_encode_decode_shape_errors():
    model = VaeModel(16, 4, (8, 6))
    with pytest.raises(ShapeError):
        encode(np.zeros((2, 15)), model)
    with pytest.raises(ShapeError):
        decode(np.zeros((2, 5)), model)
    with pytest.raises(ValueError):
        encode(np.zeros((0, 16)), model)


def test_encode_and_decode_are_pure():
    model = VaeModel(16, 4, (8, 6), rng=np.random.default_rng(1))
    x = np.random.default_rng(2).random((5, 16))
    a, b = encode(x, model), encode(x, model)
    np.testing.assert_array_equal(a.mu.data, b.mu.data)
    z = np.random.default_rng(3).standard_normal((5, 4))
    np.testing.assert_array_equal(decode(z, model).data, decode(z, model).data)


def test_graph_free_passes_match_graph_passes():
    model = VaeModel(16, 4, (8, 6), rng=np.random.default_rng(1), dtype=np.float64)
    x = np.random.default_rng(2).random((5, 16))
    mu, w = encode_array(x, model)
    post = encode(x, model)
    np.testing.assert_allclose(mu, post.mu.data, rtol=1e-12)
    np.testing.assert_allclose(w, post.log_var.data, rtol=1e-12)
    np.testing.assert_allclose(decode_array(mu, model), decode(mu, model).data, rtol=1e-12)


def test_reparameterize_examples():
    eps = np.array([[0.3, -1.2]])
    np.testing.assert_array_equal(reparameterize(posterior([0, 0], [0, 0]), noise=eps).data, eps)
    z = reparameterize(posterior([1.5, -2.0], [-800.0, -800.0]), noise=eps)
    np.testing.assert_array_equal(z.data, [[1.5, -2.0]])
    a = reparameterize(posterior(np.zeros((4, 3)), np.zeros((4, 3))), np.random.default_rng(9))
    b = reparameterize(posterior(np.zeros((4, 3)), np.zeros((4, 3))), np.random.default_rng(9))
    assert a.data.tobytes() == b.data.tobytes()
    with pytest.raises(ValueError):
        reparameterize(posterior([0.0], [0.0]))


@pytest.mark.parametrize("batch", [1, 4])
def test_gradient_of_mean_z_wrt_mu(batch):
    n = 5
    mu = Tensor(np.zeros((batch, n)), requires_grad=True)
    post = LatentPosterior(mu, Tensor(np.zeros((batch, n))))
    backward(mean(reparameterize(post, np.random.default_rng(0))))
    np.testing.assert_allclose(mu.grad, 1.0 / (batch * n))


def test_kl_examples():
    kl = kl_elementwise(posterior([0.0, 1.0, 0.0], [0.0, 0.0, math.log(4.0)])).data[0]
    assert kl[0] == 0.0
    assert kl[1] == pytest.approx(0.5, abs=1e-15)
    # oracle: -0.5 * (1 + ln 4 - 4) = 1.5 - ln 2
    assert kl[2] == pytest.approx(0.8068528194400547, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30), st.floats(-20, 20))
def test_kl_is_non_negative(mu, w):
    assert kl_elementwise(posterior([mu], [w])).data[0, 0] >= 0.0


def test_reconstruction_error_examples():
    x = np.zeros((2, 784))
    assert reconstruction_error(x, Tensor(np.zeros((2, 784)))).data.tolist() == [0.0, 0.0]
    np.testing.assert_array_equal(reconstruction_error(x, Tensor(np.full((2, 784), 0.5))).data, [196.0, 196.0])
    np.testing.assert_allclose(reconstruction_error(x, Tensor(np.full((2, 784), 0.5)), "mse").data, [0.25, 0.25], rtol=1e-15)
    rng = np.random.default_rng(0)
    a, b = rng.random((3, 7)), rng.random((3, 7))
    np.testing.assert_allclose(reconstruction_error(a, Tensor(b)).data, reconstruction_error(b, Tensor(a)).data)
    with pytest.raises(ValueError):
        reconstruction_error(a, Tensor(b), "l1")
    with pytest.raises(ShapeError):
        reconstruction_error(a, Tensor(b[:, :6]))


def test_kl_and_reconstruction_gradients_pass_finite_differences():
    assert kl_gradient_error() < 1e-6
    assert reconstruction_gradient_error() < 1e-6
    rng = np.random.default_rng(5)
    mu = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    assert finite_difference_check(lambda: mean(kl_elementwise(LatentPosterior(mu, w))), [mu, w]) < 1e-6


def test_every_parameter_receives_gradient():
    rng = np.random.default_rng(4)
    model = VaeModel(16, 4, (8, 6), rng=rng, dtype=np.float64)
    for p in model.parameters():
        p.data += 0.1 * rng.standard_normal(p.shape)
    x = rng.random((6, 16))
    post = encode(x, model)
    z = reparameterize(post, rng)
    loss = reconstruction_error(x, decode(z, model)).mean() + kl_elementwise(post).mean()
    backward(loss)
    for p in model.parameters():
        assert p.grad is not None and np.any(p.grad != 0), p.name
