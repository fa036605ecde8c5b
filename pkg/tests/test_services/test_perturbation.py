from typing import Tuple

import numpy as np
import pytest

from btcnn.models.dataset import BlurPolicy, Dataset, ProbeConfig
from btcnn.services.perturbation import (
    apply_class_blur,
    blur_image,
    convex_probe,
    draw_blur_sigmas,
    first_index_per_class,
    gaussian_kernel,
    starve,
    subset_size,
)
from btcnn.utils.errors import DimensionError, ValidationError


def test_subset_size_rounding() -> None:
    """Test round(fraction * N) on the canonical training size."""
    # Execute / Verify
    assert subset_size(0.25, 7291) == 1823
    assert subset_size(0.5, 7291) == 3646
    assert subset_size(0.01, 10) == 1


def test_starve_size_and_labels(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that the subset has round(fraction * N) images with their own labels."""
    # Setup
    train, _ = small_datasets

    # Execute
    subset = starve(train, 0.25, seed=5)

    # Verify
    assert len(subset) == 15
    for image, label in zip(subset.images, subset.labels):
        matches = np.flatnonzero((train.images == image).all(axis=(1, 2, 3)))
        assert train.labels[matches[0]] == label


def test_starve_is_deterministic(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that the same seed gives the same subset and another seed differs."""
    # Setup
    train, _ = small_datasets

    # Execute
    a, b, c = starve(train, 0.5, 1), starve(train, 0.5, 1), starve(train, 0.5, 2)

    # Verify
    assert np.array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)


def test_full_fraction_is_identity(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that fraction 1.0 keeps every image in order."""
    # Setup
    train, _ = small_datasets

    # Execute
    kept = starve(train, 1.0, seed=99)

    # Verify
    assert np.array_equal(kept.images, train.images)
    assert np.array_equal(kept.labels, train.labels)


@pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
def test_starve_rejects_fraction(small_datasets: Tuple[Dataset, Dataset], fraction: float) -> None:
    """Test that fractions outside (0, 1] are rejected."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        starve(small_datasets[0], fraction, seed=0)


def test_gaussian_kernel_ratios() -> None:
    """Test normalization and the centre-to-neighbour ratios for sigma = 1."""
    # Execute
    kernel = gaussian_kernel(1.0, 5)

    # Verify
    assert kernel.sum() == pytest.approx(1.0)
    assert kernel[2, 2] / kernel[2, 3] == pytest.approx(np.exp(0.5))
    assert kernel[2, 2] / kernel[3, 3] == pytest.approx(np.e)
    assert np.array_equal(kernel, kernel.T)


def test_gaussian_kernel_rejects_bad_arguments() -> None:
    """Test sigma <= 0 and even sizes."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        gaussian_kernel(0.0, 5)
    with pytest.raises(ValidationError):
        gaussian_kernel(1.0, 4)


def test_constant_image_is_unchanged_by_blur() -> None:
    """Test that a normalized kernel leaves a constant image constant."""
    # Execute
    out = blur_image(np.full((16, 16), 0.3), 1.2, 5)

    # Verify
    assert out == pytest.approx(np.full((16, 16), 0.3))


def test_blur_keeps_pixels_in_range(rng: np.random.Generator) -> None:
    """Test that blurred pixels stay in [0, 1] and lose contrast."""
    # Setup
    image = rng.uniform(size=(16, 16))

    # Execute
    out = blur_image(image, 1.5, 5)

    # Verify
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.std() < image.std()


def test_higher_classes_get_more_blur() -> None:
    """Test that class 9 sigmas always exceed class 0 sigmas under the default policy."""
    # Setup
    policy = BlurPolicy.default()
    labels = np.repeat([0, 9], 500)

    # Execute
    sigmas = draw_blur_sigmas(labels, policy, seed=3)

    # Verify
    assert sigmas[:500].max() < sigmas[500:].min()
    assert np.all((sigmas[:500] >= 0.05) & (sigmas[:500] <= 0.25))
    assert np.all((sigmas[500:] >= 1.85) & (sigmas[500:] <= 2.05 + 1e-12))


def test_class_blur_is_deterministic(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that blurring twice with one seed gives identical images and keeps labels."""
    # Setup
    train, _ = small_datasets
    policy = BlurPolicy.default()

    # Execute
    a = apply_class_blur(train, policy, seed=4)
    b = apply_class_blur(train, policy, seed=4)

    # Verify
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, train.labels)
    assert not np.array_equal(a.images, train.images)


def test_policy_must_increase() -> None:
    """Test that blur intervals must grow with the class label."""
    # Setup
    intervals = BlurPolicy.default().intervals[::-1]

    # Execute / Verify
    with pytest.raises(ValidationError):
        BlurPolicy(intervals)


def test_probe_endpoints_and_linearity(rng: np.random.Generator) -> None:
    """Test exact endpoint copies and the midpoint average."""
    # Setup
    a, b = rng.uniform(size=(1, 16, 16)), rng.uniform(size=(1, 16, 16))
    cfg = ProbeConfig((2, 7), alphas=np.array([0.0, 0.5, 1.0]))

    # Execute
    images = convex_probe(a, b, cfg)

    # Verify
    assert len(images) == 3
    assert np.array_equal(images[0], a)
    assert np.array_equal(images[-1], b)
    assert images[1] == pytest.approx((a + b) / 2)


def test_probe_default_grid(rng: np.random.Generator) -> None:
    """Test the ten-point default alpha grid."""
    # Execute
    cfg = ProbeConfig((0, 1))
    images = convex_probe(rng.uniform(size=(1, 4, 4)), rng.uniform(size=(1, 4, 4)), cfg)

    # Verify
    assert len(images) == 10
    assert cfg.alphas[1] == pytest.approx(1 / 9)


def test_probe_shape_mismatch() -> None:
    """Test that both images must share a shape."""
    # Execute / Verify
    with pytest.raises(DimensionError):
        convex_probe(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)), ProbeConfig((0, 1)))


@pytest.mark.parametrize("pair", [(3, 3), (5, 2), (0, 10)])
def test_probe_rejects_bad_pairs(pair: Tuple[int, int]) -> None:
    """Test that a probe pair needs 0 <= a < b < 10."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        ProbeConfig(pair)


def test_first_index_per_class(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test the lowest index of each class and the missing-class error."""
    # Setup
    _, test = small_datasets
    only_zeros = test.subset(np.flatnonzero(test.labels == 0))

    # Execute / Verify
    assert first_index_per_class(test, [3, 8]) == [3, 8]
    with pytest.raises(ValidationError):
        first_index_per_class(only_zeros, [1])
