"""
Model averaging over posterior draws and the entropy-based uncertainty split.

total = H(mean prediction), aleatoric = mean member entropy, epistemic = total -
aleatoric (the mutual information between label and parameters). All in bits.
"""
import logging
from typing import Optional

import numpy as np
from scipy.special import entr

from ..layers.network import Network
from ..models.reports import PredictionEnsemble, UncertaintyReport, check_probability_rows
from ..nn import functional as F
from ..nn.tensor import Tensor, no_grad
from ..utils.config import BATCH_SIZE
from ..utils.errors import ValidationError

logger = logging.getLogger(__name__)

_LN2 = np.log(2.0)


def _entropy_bits(probs: np.ndarray) -> np.ndarray:
    return entr(probs).sum(axis=-1) / _LN2


def entropy_bits(p: np.ndarray) -> float:
    """
    Shannon entropy of one probability row in bits, with 0 * log 0 = 0.

    Raises:
        ValidationError: For negative entries or a row not summing to 1
    """
    p = check_probability_rows(p, "probability row")
    if p.ndim != 1:
        raise ValidationError(f"entropy_bits takes a single row, got shape {p.shape}")
    return float(_entropy_bits(p))


def decompose_uncertainty(ens: PredictionEnsemble) -> UncertaintyReport:
    """
    Split the predictive entropy of every sample into aleatoric and epistemic parts.

    Samples whose members are all identical get epistemic = 0 exactly.

    Args:
        ens: Ensemble of S members over N samples

    Returns:
        Per-sample total, aleatoric and epistemic uncertainty in bits
    """
    members = ens.member_probs
    total = _entropy_bits(ens.mean_probs)
    aleatoric = _entropy_bits(members).mean(axis=0)

    agree = np.all(members == members[:1], axis=(0, 2))
    total = np.where(agree, aleatoric, total)
    epistemic = total - aleatoric
    return UncertaintyReport(total=total, aleatoric=aleatoric, epistemic=epistemic)


def predict_ensemble(
    model: Network,
    inputs: np.ndarray,
    num_samples: int,
    rng: Optional[np.random.Generator],
    batch_size: int = BATCH_SIZE
) -> PredictionEnsemble:
    """
    Average softmax outputs over S independent posterior draws.

    The trunk runs once per batch; each draw resamples the head. Deterministic
    models yield S identical members.

    Args:
        model: Network to evaluate
        inputs: [N, 1, H, W]
        num_samples: S >= 1
        rng: Source of the draws (unused by deterministic models)
        batch_size: Images per forward pass

    Returns:
        The ensemble

    Raises:
        ValidationError: If S < 1
    """
    if num_samples < 1:
        raise ValidationError(f"ensemble needs S >= 1, got {num_samples}")
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    draws = num_samples if model.is_bayesian else 1
    members = np.empty((draws, n, model.spec.num_classes))

    with no_grad():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            features = model.features(Tensor(inputs[start:stop]))
            for s in range(draws):
                members[s, start:stop] = F.softmax(model.head(features, rng)).data

    logger.debug(f"Ensemble of {num_samples} members over {n} inputs")
    if draws < num_samples:
        return PredictionEnsemble(np.repeat(members, num_samples, axis=0), members[0].copy())
    return PredictionEnsemble.from_members(members)
