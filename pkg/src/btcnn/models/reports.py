"""Result containers for calibration and uncertainty evaluations."""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..utils.errors import DimensionError, ValidationError

ROW_SUM_TOLERANCE = 1e-6


def check_probability_rows(probs: np.ndarray, what: str = "probabilities") -> np.ndarray:
    """
    Validate that the last axis holds probability vectors.

    Args:
        probs: Array whose last axis sums to 1
        what: Name used in error messages

    Returns:
        The array as float64

    Raises:
        ValidationError: For negative entries or rows not summing to 1 within 1e-6
    """
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ValidationError(f"{what} contain negative entries")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(f"{what} rows must sum to 1 (worst deviation {worst:.3g})")
    return probs


@dataclass(eq=False)
class CalibrationReport:
    """
    Binned confidence/accuracy statistics.

    Attributes:
        num_bins: M; bin m covers ((m - 1) / M, m / M]
        counts: [M] predictions per bin
        accuracies: [M] fraction correct per bin (NaN for empty bins)
        confidences: [M] mean max-probability per bin (NaN for empty bins)
        ece: Expected calibration error
        mce: Maximum calibration error over nonempty bins
    """

    num_bins: int
    counts: np.ndarray
    accuracies: np.ndarray
    confidences: np.ndarray
    ece: float
    mce: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        """Per-bin table: bin, lower, upper, count, accuracy, confidence, gap."""
        m = np.arange(1, self.num_bins + 1)
        return pd.DataFrame({
            "bin": m,
            "lower": (m - 1) / self.num_bins,
            "upper": m / self.num_bins,
            "count": self.counts,
            "accuracy": self.accuracies,
            "confidence": self.confidences,
            "gap": np.abs(self.accuracies - self.confidences),
        })


@dataclass(eq=False)
class PredictionEnsemble:
    """
    Probability vectors from S posterior draws and their average.

    Attributes:
        member_probs: [S, N, C]
        mean_probs: [N, C], the elementwise average over members
    """

    member_probs: np.ndarray
    mean_probs: np.ndarray

    def __post_init__(self) -> None:
        """Check shapes and normalization."""
        self.member_probs = check_probability_rows(self.member_probs, "member probabilities")
        self.mean_probs = check_probability_rows(self.mean_probs, "mean probabilities")
        if self.member_probs.ndim != 3 or self.member_probs.shape[1:] != self.mean_probs.shape:
            raise DimensionError("ensemble shapes disagree",
                                 self.member_probs.shape, self.mean_probs.shape)

    @classmethod
    def from_members(cls, member_probs: np.ndarray) -> "PredictionEnsemble":
        """Build an ensemble by averaging [S, N, C] member probabilities."""
        member_probs = np.asarray(member_probs, dtype=np.float64)
        if member_probs.ndim != 3 or member_probs.shape[0] < 1:
            raise DimensionError("members must be [S, N, C] with S >= 1", member_probs.shape)
        return cls(member_probs, member_probs.mean(axis=0))

    @property
    def num_members(self) -> int:
        return int(self.member_probs.shape[0])


@dataclass(eq=False)
class UncertaintyReport:
    """
    Per-sample uncertainty in bits; epistemic = total - aleatoric.

    Attributes:
        total: [N] entropy of the mean prediction
        aleatoric: [N] mean entropy of the members
        epistemic: [N] mutual information between label and parameters
    """

    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "total": self.total,
            "aleatoric": self.aleatoric,
            "epistemic": self.epistemic,
        })
