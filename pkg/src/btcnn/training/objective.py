"""
Minibatch variational objective.

For T posterior draws theta_t the loss is

    (1/T) * sum_t [ kl_scale * (log q(theta_t) - log p(theta_t)) + NLL(batch; theta_t)
                    + consistency(batch; theta_t) ]

The consistency term penalizes different output distributions for nearby inputs,
summed over ordered pairs inside the batch.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..layers.bayes import log_q_minus_log_p
from ..layers.network import Network
from ..nn import functional as F
from ..nn.tensor import Tensor
from ..utils.config import MC_TRAIN, PAIR_EPSILON
from ..utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    """
    Objective settings.

    Attributes:
        mc_samples: T, posterior draws per minibatch
        gamma: Consistency weight; 0 disables the term exactly
        kl_scale: Weight of the KL part per minibatch
        pair_epsilon: Added to ||x - x'||^2 in the consistency denominator
    """

    mc_samples: int = MC_TRAIN
    gamma: float = 0.0
    kl_scale: float = 1.0
    pair_epsilon: float = PAIR_EPSILON

    def __post_init__(self) -> None:
        """Check ranges."""
        if self.mc_samples < 1:
            raise ValidationError(f"T must be positive, got {self.mc_samples}")
        if self.gamma < 0:
            raise ValidationError(f"gamma must be non-negative, got {self.gamma}")
        if self.kl_scale <= 0:
            raise ValidationError(f"kl_scale must be positive, got {self.kl_scale}")
        if self.pair_epsilon < 0:
            raise ValidationError(f"pair_epsilon must be non-negative, got {self.pair_epsilon}")


@dataclass
class ObjectiveTerms:
    """
    A minibatch loss and its parts, averaged over draws.

    Attributes:
        loss: Differentiable total (a plain tensor under no_grad)
        nll: Mean cross-entropy
        kl: Mean log q - log p, before scaling
        consistency: Mean consistency term, gamma included
        probs: [B, C] probabilities of the first draw
    """

    loss: Tensor
    nll: float
    kl: float
    consistency: float
    probs: np.ndarray


def consistency_term(
    probs: Tensor,
    inputs: np.ndarray,
    gamma: float,
    pair_epsilon: float = PAIR_EPSILON
) -> Tensor:
    """
    Batch estimate of the consistency condition.

    Computes (1/B) * sum over ordered pairs i != j of
    gamma * ||probs_i - probs_j||^2 / (||x_i - x_j||_F^2 + pair_epsilon).

    Args:
        probs: [B, C] softmax outputs
        inputs: [B, ...] the images that produced them
        gamma: Weight; 0 returns an exact constant 0
        pair_epsilon: Denominator guard

    Returns:
        Scalar tensor, differentiable with respect to `probs`

    Raises:
        ValidationError: If two identical images meet a zero `pair_epsilon`
    """
    batch = probs.shape[0]
    if gamma == 0 or batch < 2:
        return Tensor(0.0)
    flat = np.asarray(inputs, dtype=np.float64).reshape(batch, -1)
    if flat.shape[0] != batch:
        raise DimensionError("inputs and probabilities disagree on batch size",
                             np.shape(inputs), probs.shape)

    diff = flat[:, None, :] - flat[None, :, :]
    denom = (diff * diff).sum(axis=-1) + pair_epsilon
    off_diagonal = ~np.eye(batch, dtype=bool)
    if np.any(denom[off_diagonal] == 0):
        raise ValidationError("duplicate images in a batch need pair_epsilon > 0")
    weights = np.zeros((batch, batch))
    weights[off_diagonal] = gamma / denom[off_diagonal]

    dists = F.pairwise_sq_dists(probs)
    return F.div(F.sum(F.mul_const(dists, weights)), float(batch))


def objective_terms(
    model: Network,
    batch: Tuple[np.ndarray, np.ndarray],
    cfg: LossConfig,
    rng: Optional[np.random.Generator]
) -> ObjectiveTerms:
    """
    Evaluate the minibatch objective and keep its parts.

    The trunk runs once; each draw resamples only the Bayesian head. Deterministic
    models use a single draw.

    Args:
        model: Network to evaluate
        batch: (images [B, 1, H, W], labels [B])
        cfg: Objective settings
        rng: Source of the posterior draws

    Returns:
        The loss and its parts

    Raises:
        ValidationError: If the batch is empty
    """
    images, labels = batch
    if len(labels) == 0:
        raise ValidationError("minibatch is empty")

    features = model.features(Tensor(images))
    draws = cfg.mc_samples if model.is_bayesian else 1
    bayes_layers = model.bayesian_layers()

    total: Optional[Tensor] = None
    nll_sum = kl_sum = cc_sum = 0.0
    first_probs = None
    for _ in range(draws):
        logits = model.head(features, rng)
        nll, probs = F.softmax_cross_entropy(logits, labels)
        term = nll
        if bayes_layers:
            kl = log_q_minus_log_p(bayes_layers)
            term = F.add(F.mul(cfg.kl_scale, kl), term)
            kl_sum += kl.item()
        if cfg.gamma > 0:
            cc = consistency_term(probs, images, cfg.gamma, cfg.pair_epsilon)
            term = F.add(term, cc)
            cc_sum += cc.item()
        total = term if total is None else F.add(total, term)
        nll_sum += nll.item()
        if first_probs is None:
            first_probs = probs.data

    loss = total if draws == 1 else F.div(total, float(draws))
    return ObjectiveTerms(
        loss=loss,
        nll=nll_sum / draws,
        kl=kl_sum / draws,
        consistency=cc_sum / draws,
        probs=first_probs,
    )


def minibatch_loss(
    model: Network,
    batch: Tuple[np.ndarray, np.ndarray],
    cfg: LossConfig,
    rng: Optional[np.random.Generator]
) -> Tensor:
    """Return the scalar minibatch objective; see `objective_terms`."""
    return objective_terms(model, batch, cfg, rng).loss
