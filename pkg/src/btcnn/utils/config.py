"""Default settings shared across the package."""
import math
from pathlib import Path
from typing import Final, Tuple

# Paths
HOME: Final[Path] = Path.home()
DEFAULT_CACHE_DIR: Final[Path] = HOME / ".cache" / "btcnn"
DEFAULT_OUT_DIR: Final[Path] = Path("results")

# USPS layout
IMAGE_SIZE: Final[int] = 16
NUM_CLASSES: Final[int] = 10
USPS_TRAIN_SIZE: Final[int] = 7291
USPS_TEST_SIZE: Final[int] = 2007
USPS_FIELDS_PER_LINE: Final[int] = 1 + IMAGE_SIZE * IMAGE_SIZE

# Binary cache
CACHE_MAGIC: Final[bytes] = b"BTCU"
CACHE_FORMAT_VERSION: Final[int] = 1

# Architecture
VARIANTS: Final[Tuple[str, ...]] = ("cnn", "tcnn", "bnn", "btcnn", "btcnn-cc")
CONV1_CHANNELS: Final[int] = 36
CONV2_CHANNELS: Final[int] = 64
KERNEL_SIZE: Final[int] = 3
POOL_WINDOW: Final[int] = 2
HIDDEN_WIDTH: Final[int] = 128
COL_THRESHOLD: Final[float] = 2 * math.pi / 3

# Variational posterior
RHO_INIT: Final[float] = -3.0

# Optimizer
LEARNING_RATE: Final[float] = 1e-3
ADAM_BETA1: Final[float] = 0.9
ADAM_BETA2: Final[float] = 0.999
ADAM_EPSILON: Final[float] = 1e-8

# Training and evaluation
EPOCHS: Final[int] = 40
BATCH_SIZE: Final[int] = 64
MC_TRAIN: Final[int] = 1
MC_EVAL: Final[int] = 30
CALIBRATION_BINS: Final[int] = 10
GAMMA_CC: Final[float] = 0.1
PAIR_EPSILON: Final[float] = 1e-8
REPORT_EPOCH: Final[int] = 10
PLATEAU_TOLERANCE: Final[float] = 0.01

# Experiments
STARVATION_FRACTIONS: Final[Tuple[float, ...]] = (0.25, 0.5, 0.75, 1.0)
REPEATS: Final[int] = 10
PROBE_STEPS: Final[int] = 10

# Class-correlated blur: class c gets sigma in [BLUR_LO + c * BLUR_STEP, BLUR_HI + c * BLUR_STEP]
BLUR_LO: Final[float] = 0.05
BLUR_HI: Final[float] = 0.25
BLUR_STEP: Final[float] = 0.2
BLUR_KERNEL_SIZE: Final[int] = 5
