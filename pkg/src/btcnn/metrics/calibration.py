"""Accuracy and binned calibration errors (ECE, MCE)."""
import numpy as np

from ..models.reports import CalibrationReport, check_probability_rows
from ..utils.config import CALIBRATION_BINS
from ..utils.errors import DimensionError, ValidationError


def _checked(probs: np.ndarray, labels: np.ndarray):
    probs = check_probability_rows(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise DimensionError("probabilities must be [N, C]", probs.shape)
    if labels.shape != (probs.shape[0],):
        raise DimensionError("one label per prediction", labels.shape, probs.shape[:1])
    if probs.shape[0] == 0:
        raise ValidationError("calibration needs at least one prediction")
    return probs, labels


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """
    Fraction of rows whose argmax (ties to the smallest index) equals the label.

    Args:
        probs: [N, C] probability rows
        labels: [N] integer labels

    Returns:
        Accuracy in [0, 1]
    """
    probs, labels = _checked(probs, labels)
    return float(np.mean(probs.argmax(axis=1) == labels))


def assign_bins(confidences: np.ndarray, num_bins: int) -> np.ndarray:
    """
    Map confidences to 0-based bin indices; bin m covers ((m - 1) / M, m / M].

    Edges are computed as m / M so the boundaries match the interval definition.
    """
    edges = np.arange(num_bins + 1) / num_bins
    bins = np.searchsorted(edges, confidences, side="left") - 1
    return np.clip(bins, 0, num_bins - 1)


def compute_calibration(
    probs: np.ndarray,
    labels: np.ndarray,
    num_bins: int = CALIBRATION_BINS
) -> CalibrationReport:
    """
    Bin predictions by confidence and compare accuracy with confidence per bin.

    ECE = sum_m (|B_m| / N) * |acc_m - conf_m|; MCE = max over nonempty bins.

    Args:
        probs: [N, C] probability rows (averaged ensemble predictions)
        labels: [N] integer labels
        num_bins: M

    Returns:
        The report

    Raises:
        ValidationError: If rows are not normalized, N = 0 or M < 1
    """
    if num_bins < 1:
        raise ValidationError(f"bin count must be positive, got {num_bins}")
    probs, labels = _checked(probs, labels)

    confidences = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    bins = assign_bins(confidences, num_bins)

    # Sum each bin in (bin, confidence) order so the result does not depend on row order.
    order = np.lexsort((confidences, bins))
    confidences, correct, bins = confidences[order], correct[order], bins[order]

    counts = np.bincount(bins, minlength=num_bins)
    correct_sums = np.bincount(bins, weights=correct, minlength=num_bins)
    conf_sums = np.bincount(bins, weights=confidences, minlength=num_bins)

    nonempty = counts > 0
    accuracies = np.full(num_bins, np.nan)
    mean_conf = np.full(num_bins, np.nan)
    accuracies[nonempty] = correct_sums[nonempty] / counts[nonempty]
    mean_conf[nonempty] = conf_sums[nonempty] / counts[nonempty]

    gaps = np.abs(accuracies[nonempty] - mean_conf[nonempty])
    ece = float(np.sum(counts[nonempty] / probs.shape[0] * gaps))
    mce = float(gaps.max())
    return CalibrationReport(num_bins, counts, accuracies, mean_conf, ece, mce)
