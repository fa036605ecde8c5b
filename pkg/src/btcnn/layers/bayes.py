"""
Mean-field Gaussian variational layers.

Each weight has a posterior N(mu, sigma^2) with sigma = ln(1 + e^rho). Forward passes
draw theta = mu + eps * sigma with eps ~ N(0, 1) so gradients reach mu and rho. The
prior is the standard normal N(0, I).
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..nn import functional as F
from ..nn.layers import Module, fan_in_uniform
from ..nn.tensor import Tensor
from ..utils.config import RHO_INIT
from ..utils.errors import DimensionError, StateError, ValidationError

logger = logging.getLogger(__name__)


class VariationalParameter:
    """
    Posterior parameters (mu, rho) of one weight tensor plus its last draw.

    Attributes:
        mu: Posterior means, trainable
        rho: Unconstrained scales, trainable; sigma = softplus(rho) > 0
        last_epsilon: Noise of the most recent draw
        last_sigma: sigma tensor of the most recent draw (part of its graph)
        last_theta: The most recent draw, mu + last_epsilon * sigma
    """

    def __init__(self, mu: np.ndarray, rho_init: float = RHO_INIT, name: str = "vp") -> None:
        """
        Initialize the posterior.

        Args:
            mu: Initial means; also fixes the shape
            rho_init: Initial value of every rho entry
            name: Label for log messages
        """
        mu = np.asarray(mu, dtype=np.float64)
        self.mu = Tensor(mu.copy(), requires_grad=True, name=f"{name}.mu")
        self.rho = Tensor(np.full(mu.shape, rho_init), requires_grad=True, name=f"{name}.rho")
        self.name = name
        self.last_epsilon: Optional[np.ndarray] = None
        self.last_sigma: Optional[Tensor] = None
        self.last_theta: Optional[Tensor] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        """Current posterior standard deviations."""
        return np.logaddexp(0.0, self.rho.data)

    def parameters(self) -> List[Tensor]:
        return [self.mu, self.rho]


def sample_theta(
    vp: VariationalParameter,
    rng: np.random.Generator,
    epsilon: Optional[np.ndarray] = None
) -> Tensor:
    """
    Draw theta = mu + eps * sigma and record the draw on `vp`.

    Args:
        vp: Posterior to sample
        rng: Source of eps ~ N(0, 1)
        epsilon: Fixed noise to use instead of drawing from `rng`

    Returns:
        The draw, differentiable with respect to mu and rho
    """
    if epsilon is None:
        epsilon = rng.standard_normal(vp.shape)
    else:
        epsilon = np.asarray(epsilon, dtype=np.float64)
        if epsilon.shape != vp.shape:
            raise DimensionError("epsilon does not match the parameter", epsilon.shape, vp.shape)
    sigma = F.softplus(vp.rho)
    theta = F.add(vp.mu, F.mul_const(sigma, epsilon))
    vp.last_epsilon = epsilon
    vp.last_sigma = sigma
    vp.last_theta = theta
    return theta


def kl_closed_form(vp: VariationalParameter) -> float:
    """Return KL(q || N(0, I)) = sum 0.5 * (mu^2 + sigma^2 - 1 - ln sigma^2)."""
    mu = vp.mu.data
    var = vp.sigma ** 2
    return float(0.5 * (mu * mu + var - 1.0 - np.log(var)).sum())


def _log_ratio(vp: VariationalParameter) -> Tensor:
    # log N(theta; mu, sigma^2) - log N(theta; 0, 1); the 2*pi terms cancel
    if vp.last_theta is None:
        raise StateError(f"{vp.name}: log-density needs a forward pass first")
    theta, sigma = vp.last_theta, vp.last_sigma
    z = F.div(F.sub(theta, vp.mu), sigma)
    log_q = F.neg(F.add(F.sum(F.log(sigma)), 0.5 * F.sum(F.square(z))))
    log_p = -0.5 * F.sum(F.square(theta))
    return F.sub(log_q, log_p)


class BayesianDense(Module):
    """Dense layer with Gaussian posteriors on its weights and biases."""

    stochastic = True

    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        rho_init: float = RHO_INIT
    ) -> None:
        """
        Initialize the layer.

        Args:
            n_in: Input width
            n_out: Output width
            rng: Initialization stream for the means
            rho_init: Initial rho, sigma = softplus(rho_init)
        """
        self.weight_vp = VariationalParameter(
            fan_in_uniform((n_in, n_out), n_in, rng), rho_init, name="bdense.w"
        )
        self.bias_vp = VariationalParameter(np.zeros(n_out), rho_init, name="bdense.b")

    def parameters(self) -> List[Tensor]:
        return self.weight_vp.parameters() + self.bias_vp.parameters()

    def variational_parameters(self) -> List[VariationalParameter]:
        return [self.weight_vp, self.bias_vp]

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return bayes_dense_forward(self, x, rng)

    def kl_closed_form(self) -> float:
        return kl_closed_form(self.weight_vp) + kl_closed_form(self.bias_vp)


def bayes_dense_forward(
    layer: BayesianDense,
    input: Tensor,
    rng: Optional[np.random.Generator]
) -> Tensor:
    """
    Draw fresh weights and biases, then apply the dense map.

    Args:
        layer: The Bayesian layer
        input: [B, n_in]
        rng: Source of the draws

    Returns:
        [B, n_out]
    """
    if rng is None:
        raise ValidationError("Bayesian layers need a random stream")
    theta_w = sample_theta(layer.weight_vp, rng)
    theta_b = sample_theta(layer.bias_vp, rng)
    return F.dense(input, theta_w, theta_b)


def log_q_minus_log_p(layers: Sequence[BayesianDense]) -> Tensor:
    """
    Single-sample estimate of log q(theta) - log p(theta) at the recorded draws.

    Args:
        layers: Bayesian layers that have each run a forward pass

    Returns:
        Scalar tensor, differentiable with respect to every mu and rho (0 for no layers)

    Raises:
        StateError: If a layer has not been sampled yet
    """
    total = Tensor(0.0)
    for layer in layers:
        for vp in layer.variational_parameters():
            total = F.add(total, _log_ratio(vp))
    return total
