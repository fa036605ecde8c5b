import os
from pathlib import Path
from typing import Callable, Tuple

import numpy as np
import pytest

from btcnn.models.dataset import Dataset
from btcnn.models.run_config import RunConfig
from btcnn.nn.tensor import Tensor


def _digit_images(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Class c lights up row band c plus mild noise; learnable by tiny networks."""
    images = rng.uniform(0.0, 0.15, size=(len(labels), 1, 16, 16))
    for n, label in enumerate(labels):
        images[n, 0, label + 3, 2:14] = 0.9
        images[n, 0, 2:14, 15 - label] = 0.7
    return images


def write_usps_file(path: Path, labels: np.ndarray, rng: np.random.Generator) -> Path:
    """Write labels with synthetic pixels in the classic USPS text format."""
    pixels = _digit_images(labels, rng) * 2.0 - 1.0
    with open(path, "w") as f:
        for label, image in zip(labels, pixels):
            values = " ".join(f"{v:.6f}" for v in image.ravel())
            f.write(f"{label} {values}\n")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random stream."""
    return np.random.default_rng(1234)


@pytest.fixture
def usps_files(tmp_path: Path) -> Tuple[Path, Path]:
    """Tiny USPS-format train (40 lines) and test (20 lines) files."""
    gen = np.random.default_rng(7)
    train = write_usps_file(tmp_path / "usps.train", np.tile(np.arange(10), 4), gen)
    test = write_usps_file(tmp_path / "usps.test", np.tile(np.arange(10), 2), gen)
    return train, test


@pytest.fixture
def small_datasets() -> Tuple[Dataset, Dataset]:
    """Synthetic train (60) and test (20) sets covering every class."""
    gen = np.random.default_rng(11)
    train_labels = np.tile(np.arange(10), 6)
    test_labels = np.tile(np.arange(10), 2)
    train = Dataset(_digit_images(train_labels, gen), train_labels, "train")
    test = Dataset(_digit_images(test_labels, gen), test_labels, "test")
    return train, test


@pytest.fixture
def small_config() -> Callable[..., RunConfig]:
    """Factory of narrow, short run configs."""
    def make(variant: str = "btcnn", **overrides) -> RunConfig:
        settings = dict(
            variant=variant, seed=3, epochs=2, batch_size=16, mc_eval=3,
            conv1_channels=4, conv2_channels=6, hidden=8,
        )
        settings.update(overrides)
        return RunConfig(**settings)
    return make


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function with respect to `x.data`."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f()
        flat[i] = original - h
        minus = f()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """
    Max elementwise relative error.

    The denominator never drops below `floor`, which sits well above the roughly 1e-10
    rounding noise of central differences, so entries whose true gradient is 0 pass.
    """
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture(scope="session")
def usps_paths() -> Tuple[Path, Path]:
    """Real USPS files from BTCNN_USPS_TRAIN / BTCNN_USPS_TEST; skips when unset."""
    train, test = os.environ.get("BTCNN_USPS_TRAIN"), os.environ.get("BTCNN_USPS_TEST")
    if not train or not test:
        pytest.skip("BTCNN_USPS_TRAIN and BTCNN_USPS_TEST are not set")
    return Path(train), Path(test)
