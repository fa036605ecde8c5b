import numpy as np
import pytest

from btcnn.layers.bayes import (
    BayesianDense,
    VariationalParameter,
    bayes_dense_forward,
    kl_closed_form,
    log_q_minus_log_p,
    sample_theta,
)
from btcnn.nn import functional as F
from btcnn.nn.tensor import Tensor
from btcnn.utils.errors import StateError, ValidationError
from tests.conftest import numeric_grad, relative_error


def rho_for(sigma: float) -> float:
    """Inverse softplus."""
    return float(np.log(np.expm1(sigma)))


def test_sigma_is_positive_for_very_negative_rho() -> None:
    """Test that sigma stays strictly positive."""
    # Execute
    vp = VariationalParameter(np.zeros(3), rho_init=-40.0)

    # Verify
    assert np.all(vp.sigma > 0)


def test_sample_records_theta(rng: np.random.Generator) -> None:
    """Test that last_theta = mu + last_epsilon * sigma."""
    # Setup
    vp = VariationalParameter(rng.normal(size=(3, 2)), rho_init=-1.0)

    # Execute
    theta = sample_theta(vp, rng)

    # Verify
    assert theta is vp.last_theta
    assert theta.data == pytest.approx(vp.mu.data + vp.last_epsilon * vp.sigma)


def test_collapsed_posterior_returns_mean(rng: np.random.Generator) -> None:
    """Test that sigma -> 0 gives theta ~ mu."""
    # Setup
    vp = VariationalParameter(rng.normal(size=5), rho_init=-40.0)

    # Execute
    theta = sample_theta(vp, rng)

    # Verify
    assert theta.data == pytest.approx(vp.mu.data, abs=1e-12)


def test_sampling_statistics() -> None:
    """Test mean and variance of 1e5 draws with mu=0, sigma=1."""
    # Setup
    vp = VariationalParameter(np.zeros(100_000), rho_init=rho_for(1.0))

    # Execute
    theta = sample_theta(vp, np.random.default_rng(0)).data

    # Verify
    assert abs(theta.mean()) < 0.02
    assert abs(theta.var() - 1.0) < 0.05


def test_same_seed_same_draw() -> None:
    """Test determinism of draws."""
    # Setup
    vp = VariationalParameter(np.ones(4))

    # Execute
    first = sample_theta(vp, np.random.default_rng(9)).data.copy()
    second = sample_theta(vp, np.random.default_rng(9)).data

    # Verify
    assert np.array_equal(first, second)


def test_closed_form_examples() -> None:
    """Test KL(q || p) for mu=0, sigma=1 and mu=1, sigma=1."""
    # Setup
    standard = VariationalParameter(np.zeros(1), rho_init=rho_for(1.0))
    shifted = VariationalParameter(np.ones(1), rho_init=rho_for(1.0))

    # Execute / Verify
    assert kl_closed_form(standard) == pytest.approx(0.0, abs=1e-12)
    assert kl_closed_form(shifted) == pytest.approx(0.5)


def test_log_ratio_vanishes_when_q_equals_p(rng: np.random.Generator) -> None:
    """Test that log q - log p is 0 at every draw when q = N(0, 1)."""
    # Setup
    layer = BayesianDense(3, 2, rng, rho_init=rho_for(1.0))
    layer.weight_vp.mu.data[...] = 0.0

    # Execute
    bayes_dense_forward(layer, Tensor(rng.normal(size=(1, 3))), rng)
    value = log_q_minus_log_p([layer]).item()

    # Verify
    assert value == pytest.approx(0.0, abs=1e-9)


def test_monte_carlo_kl_matches_closed_form() -> None:
    """Test E[log q - log p] over 1e5 draws against the closed form for 10 settings."""
    gen = np.random.default_rng(2024)
    draws = 100_000
    for _ in range(10):
        # Setup
        mu = gen.choice([-1.0, 1.0], size=3) * gen.uniform(0.5, 1.5, size=3)
        sigma = gen.uniform(0.2, 0.6, size=3)
        single = VariationalParameter(mu)
        single.rho.data[...] = np.log(np.expm1(sigma))
        tiled = VariationalParameter(np.tile(mu, (draws, 1)))
        tiled.rho.data[...] = np.tile(single.rho.data, (draws, 1))
        layer = BayesianDense(1, 1, gen)
        layer.weight_vp, layer.bias_vp = tiled, VariationalParameter(np.zeros(1))
        layer.bias_vp.rho.data[...] = rho_for(1.0)
        layer.bias_vp.mu.data[...] = 0.0

        # Execute
        sample_theta(tiled, gen)
        sample_theta(layer.bias_vp, gen)
        estimate = log_q_minus_log_p([layer]).item() / draws
        exact = kl_closed_form(single)

        # Verify
        assert estimate == pytest.approx(exact, rel=0.02)


def test_spec_kl_example_per_entry() -> None:
    """Test mu=1, sigma=0.5 gives about 0.8181 nats per entry."""
    # Setup
    vp = VariationalParameter(np.ones(100_000))
    vp.rho.data[...] = rho_for(0.5)

    # Execute
    sample_theta(vp, np.random.default_rng(3))
    layer = BayesianDense(1, 1, np.random.default_rng(0))
    layer.weight_vp = vp
    layer.bias_vp = VariationalParameter(np.zeros(1), rho_init=rho_for(1.0))
    sample_theta(layer.bias_vp, np.random.default_rng(4))
    estimate = log_q_minus_log_p([layer]).item() / vp.mu.size

    # Verify
    assert kl_closed_form(VariationalParameter(np.ones(1), rho_init=rho_for(0.5))) == \
        pytest.approx(0.5 * (1 + 0.25 - 1 - np.log(0.25)))
    assert estimate == pytest.approx(0.8181, rel=0.02)


def test_two_layers_add(rng: np.random.Generator) -> None:
    """Test that the log ratio of two layers is the sum of the per-layer values."""
    # Setup
    first, second = BayesianDense(3, 4, rng), BayesianDense(4, 2, rng)
    h = bayes_dense_forward(first, Tensor(rng.normal(size=(2, 3))), rng)
    bayes_dense_forward(second, h, rng)

    # Execute
    both = log_q_minus_log_p([first, second]).item()
    parts = log_q_minus_log_p([first]).item() + log_q_minus_log_p([second]).item()

    # Verify
    assert both == pytest.approx(parts)


def test_log_ratio_before_forward_raises(rng: np.random.Generator) -> None:
    """Test that the log ratio needs a recorded draw."""
    # Execute / Verify
    with pytest.raises(StateError):
        log_q_minus_log_p([BayesianDense(2, 2, rng)])


def test_forward_needs_rng(rng: np.random.Generator) -> None:
    """Test that Bayesian layers refuse to run without a random stream."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        bayes_dense_forward(BayesianDense(2, 2, rng), Tensor(np.ones((1, 2))), None)


def test_different_seeds_give_different_outputs(rng: np.random.Generator) -> None:
    """Test that fresh draws change the output."""
    # Setup
    layer = BayesianDense(3, 2, rng, rho_init=0.0)
    x = Tensor(np.ones((1, 3)))

    # Execute
    a = bayes_dense_forward(layer, x, np.random.default_rng(1)).data
    b = bayes_dense_forward(layer, x, np.random.default_rng(2)).data

    # Verify
    assert not np.allclose(a, b)


def test_collapsed_layer_matches_deterministic_dense(rng: np.random.Generator) -> None:
    """Test that sigma ~ 0 with identity means reproduces the plain dense map."""
    # Setup
    layer = BayesianDense(3, 3, rng, rho_init=-40.0)
    layer.weight_vp.mu.data[...] = np.eye(3)
    x = rng.normal(size=(2, 3))

    # Execute
    out = bayes_dense_forward(layer, Tensor(x), rng)

    # Verify
    assert out.data == pytest.approx(x, abs=1e-12)


def test_ensemble_variance_shrinks_with_samples() -> None:
    """Test that the variance of S-sample averages falls roughly as 1/S."""
    # Setup
    layer = BayesianDense(4, 1, np.random.default_rng(0), rho_init=0.0)
    x = Tensor(np.ones((1, 4)))
    gen = np.random.default_rng(1)

    def averaged(s: int) -> float:
        return float(np.mean([bayes_dense_forward(layer, x, gen).item() for _ in range(s)]))

    # Execute
    var1 = np.var([averaged(1) for _ in range(400)])
    var16 = np.var([averaged(16) for _ in range(400)])

    # Verify
    assert 8.0 < var1 / var16 < 32.0


def test_reparameterization_gradients(rng: np.random.Generator) -> None:
    """Test gradients to mu and rho through a fixed-noise draw and the log ratio."""
    # Setup
    vp = VariationalParameter(rng.normal(size=(3, 2)), rho_init=-0.5)
    vp.rho.data[...] += rng.normal(scale=0.3, size=(3, 2))
    epsilon = rng.normal(size=(3, 2))
    x = Tensor(rng.normal(size=(4, 3)))
    bias = Tensor(np.zeros(2))
    labels = np.array([0, 1, 1, 0])
    layer = BayesianDense(1, 1, rng)
    layer.weight_vp = vp
    layer.bias_vp = VariationalParameter(np.zeros(1))

    def build() -> Tensor:
        theta = sample_theta(vp, rng, epsilon=epsilon)
        sample_theta(layer.bias_vp, rng, epsilon=np.zeros(1))
        nll = F.cross_entropy(F.dense(x, theta, bias), labels)
        return F.add(nll, F.mul(0.01, log_q_minus_log_p([layer])))

    # Execute
    vp.mu.grad = vp.rho.grad = None
    build().backward()

    # Verify
    for p in (vp.mu, vp.rho):
        assert relative_error(p.grad, numeric_grad(lambda: build().item(), p)) < 1e-4
