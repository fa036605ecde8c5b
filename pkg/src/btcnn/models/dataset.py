"""Image datasets, the blur policy and convex-combination probe settings."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..utils.config import (
    BLUR_HI,
    BLUR_KERNEL_SIZE,
    BLUR_LO,
    BLUR_STEP,
    NUM_CLASSES,
    PROBE_STEPS,
)
from ..utils.errors import DimensionError, ValidationError


@dataclass(eq=False)
class Dataset:
    """
    Greyscale digit images with integer labels.

    Attributes:
        images: [N, 1, H, W] float64 pixels in [0, 1]
        labels: [N] integers in [0, 10)
        split: "train" or "test"
    """

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self) -> None:
        """Normalize dtypes and check the invariants."""
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DimensionError("images must be [N, 1, H, W]", self.images.shape)
        if self.labels.shape != (self.images.shape[0],):
            raise DimensionError("one label per image", self.labels.shape, self.images.shape[:1])
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValidationError("pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValidationError(f"labels must lie in [0, {NUM_CLASSES})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Return the images and labels at `indices`, in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.split)

    def class_counts(self) -> np.ndarray:
        """Return the number of images of each class."""
        return np.bincount(self.labels, minlength=NUM_CLASSES)


@dataclass(eq=False)
class BlurPolicy:
    """
    Per-class ranges of Gaussian blur standard deviations.

    Attributes:
        intervals: [10, 2] array of (lo_c, hi_c) in pixels, strictly increasing in c
        kernel_size: Odd side of the blur kernel
    """

    intervals: np.ndarray
    kernel_size: int = BLUR_KERNEL_SIZE

    def __post_init__(self) -> None:
        """Check the intervals."""
        self.intervals = np.asarray(self.intervals, dtype=np.float64)
        if self.intervals.shape != (NUM_CLASSES, 2):
            raise DimensionError("blur intervals must be [10, 2]", self.intervals.shape)
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        if np.any(lo <= 0) or np.any(hi < lo):
            raise ValidationError("each blur interval needs 0 < lo <= hi")
        if np.any(np.diff(lo) <= 0) or np.any(np.diff(hi) <= 0):
            raise ValidationError("blur intervals must increase strictly with the class label")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"blur kernel size must be odd, got {self.kernel_size}")

    @classmethod
    def default(cls) -> "BlurPolicy":
        """Class c gets sigma in [0.05 + 0.2c, 0.25 + 0.2c], kernel size 5."""
        classes = np.arange(NUM_CLASSES)
        intervals = np.stack([BLUR_LO + BLUR_STEP * classes, BLUR_HI + BLUR_STEP * classes], axis=1)
        return cls(intervals)

    def to_dict(self) -> dict:
        return {"intervals": self.intervals.tolist(), "kernel_size": self.kernel_size}


def default_alphas(steps: int = PROBE_STEPS) -> np.ndarray:
    """Return the evenly spaced grid {k / (steps - 1)}, endpoints included."""
    return np.arange(steps) / (steps - 1)


@dataclass(eq=False)
class ProbeConfig:
    """
    A convex-combination sweep between images of two classes.

    Attributes:
        pair: Class labels (a, b) with a < b
        alphas: Sorted weights in [0, 1], including 0 and 1
    """

    pair: Tuple[int, int]
    alphas: np.ndarray = field(default_factory=default_alphas)

    def __post_init__(self) -> None:
        """Check the pair and the weights."""
        a, b = self.pair
        if not (0 <= a < b < NUM_CLASSES):
            raise ValidationError(f"probe pair must satisfy 0 <= a < b < 10, got {self.pair}")
        self.pair = (int(a), int(b))
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.alphas.ndim != 1 or self.alphas.size < 2:
            raise ValidationError("probe needs at least two alphas")
        if np.any(np.diff(self.alphas) < 0):
            raise ValidationError("probe alphas must be sorted")
        if self.alphas[0] != 0.0 or self.alphas[-1] != 1.0:
            raise ValidationError("probe alphas must start at 0 and end at 1")


def probe_pairs(pair: Optional[Tuple[int, int]] = None) -> Tuple[Tuple[int, int], ...]:
    """Return the requested pair, or all 45 unordered digit pairs."""
    if pair is not None:
        return (tuple(sorted(pair)),)
    return tuple((a, b) for a in range(NUM_CLASSES) for b in range(a + 1, NUM_CLASSES))
