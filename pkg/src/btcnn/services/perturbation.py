"""Data starvation, class-correlated blur and convex-combination probes."""
import logging
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from ..models.dataset import BlurPolicy, Dataset, ProbeConfig
from ..utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)


def subset_size(fraction: float, n: int) -> int:
    """Half-up rounding of fraction * n, at least 1 for non-empty sets."""
    return max(1 if n else 0, int(np.floor(fraction * n + 0.5)))


def starve(train: Dataset, fraction: float, seed: int) -> Dataset:
    """
    Keep a uniformly random subset of the training set.

    Indices are drawn without replacement and returned in ascending order, so
    fraction 1.0 is the identity.

    Args:
        train: Full training set
        fraction: Share kept, in (0, 1]
        seed: Subset seed

    Returns:
        The subset, labels paired with their images

    Raises:
        ValidationError: If the fraction is outside (0, 1]
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"subset fraction must lie in (0, 1], got {fraction}")
    n = len(train)
    size = subset_size(fraction, n)
    if size == n:
        return train.subset(np.arange(n))
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=size, replace=False))
    logger.debug(f"Starved training set to {size} of {n} images (seed {seed})")
    return train.subset(indices)


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """
    Normalized 2-D Gaussian on a centered size x size grid.

    Args:
        sigma: Standard deviation in pixels, > 0
        size: Odd side length

    Returns:
        [size, size] weights summing to 1

    Raises:
        ValidationError: For sigma <= 0 or an even size
    """
    if sigma <= 0:
        raise ValidationError(f"blur sigma must be positive, got {sigma}")
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"blur kernel size must be odd, got {size}")
    r = np.arange(size) - size // 2
    sq = r[:, None] ** 2 + r[None, :] ** 2
    kernel = np.exp(-sq / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def blur_image(image: np.ndarray, sigma: float, size: int) -> np.ndarray:
    """Blur a 2-D image with reflect padding and clamp to [0, 1]."""
    blurred = ndimage.convolve(image, gaussian_kernel(sigma, size), mode="reflect")
    return np.clip(blurred, 0.0, 1.0)


def draw_blur_sigmas(labels: np.ndarray, policy: BlurPolicy, seed: int) -> np.ndarray:
    """Draw sigma ~ U[lo_c, hi_c] for every image, in index order."""
    rng = np.random.default_rng(seed)
    lo = policy.intervals[labels, 0]
    hi = policy.intervals[labels, 1]
    return rng.uniform(lo, hi)


def apply_class_blur(ds: Dataset, policy: BlurPolicy, seed: int) -> Dataset:
    """
    Blur every image with a sigma drawn from its class interval.

    Args:
        ds: Images to blur
        policy: Per-class sigma intervals and kernel size
        seed: Seed of the sigma draws

    Returns:
        A new dataset with the same labels
    """
    sigmas = draw_blur_sigmas(ds.labels, policy, seed)
    images = np.empty_like(ds.images)
    for i, sigma in enumerate(sigmas):
        images[i, 0] = blur_image(ds.images[i, 0], sigma, policy.kernel_size)
    logger.info(
        f"Applied class-correlated blur to {len(ds)} {ds.split} images "
        f"(sigma {sigmas.min():.3f}..{sigmas.max():.3f})" if len(ds) else
        f"No {ds.split} images to blur"
    )
    return Dataset(images, ds.labels.copy(), ds.split)


def convex_probe(a_img: np.ndarray, b_img: np.ndarray, cfg: ProbeConfig) -> List[np.ndarray]:
    """
    Pixel-wise interpolations x_alpha = (1 - alpha) * a + alpha * b.

    Args:
        a_img: [1, H, W] image of class cfg.pair[0]
        b_img: [1, H, W] image of class cfg.pair[1]
        cfg: Pair and weights

    Returns:
        One image per alpha; the endpoints reproduce the inputs exactly
    """
    a_img = np.asarray(a_img, dtype=np.float64)
    b_img = np.asarray(b_img, dtype=np.float64)
    if a_img.shape != b_img.shape:
        raise DimensionError("probe images differ in shape", a_img.shape, b_img.shape)
    images = []
    for alpha in cfg.alphas:
        if alpha == 0.0:
            images.append(a_img.copy())
        elif alpha == 1.0:
            images.append(b_img.copy())
        else:
            images.append((1.0 - alpha) * a_img + alpha * b_img)
    return images


def first_index_per_class(ds: Dataset, classes: Sequence[int]) -> List[int]:
    """
    Return the lowest dataset index of each requested class.

    Raises:
        ValidationError: If a class does not occur in the dataset
    """
    indices = []
    for c in classes:
        hits = np.flatnonzero(ds.labels == c)
        if hits.size == 0:
            raise ValidationError(f"class {c} does not occur in the {ds.split} set")
        indices.append(int(hits[0]))
    return indices
