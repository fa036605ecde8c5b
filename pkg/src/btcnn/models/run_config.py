"""Settings of a single training run."""
from dataclasses import asdict, dataclass, fields
from typing import Optional

from ..utils.config import (
    BATCH_SIZE,
    CALIBRATION_BINS,
    COL_THRESHOLD,
    CONV1_CHANNELS,
    CONV2_CHANNELS,
    EPOCHS,
    GAMMA_CC,
    HIDDEN_WIDTH,
    LEARNING_RATE,
    MC_EVAL,
    MC_TRAIN,
    PAIR_EPSILON,
    REPORT_EPOCH,
    RHO_INIT,
)
from ..utils.errors import ValidationError
from .model_spec import CONSISTENCY_VARIANTS, ModelSpec


@dataclass
class RunConfig:
    """
    Every setting of a training run; `to_dict()` is the reproducibility snapshot.

    Attributes:
        variant: Model variant
        seed: Master seed; required, there is no implicit seeding
        epochs: Training epochs
        batch_size: Minibatch size
        learning_rate: Optimizer step size
        optimizer: "adam" or "sgd"
        mc_train: Posterior draws T per training loss
        mc_eval: Posterior draws S per evaluation
        gamma: Consistency weight; None picks the variant default
        kl_scale: KL weight per minibatch; None means 1 / batches per epoch
        pair_epsilon: Guard in the consistency denominator
        bins: Calibration bins M
        col_threshold: Circle-one threshold tau
        conv1_channels: First convolution width
        conv2_channels: Second convolution width
        hidden: First dense layer width
        rho_init: Initial rho of Bayesian layers
        subset_fraction: Fraction of the training set kept
        blur_train: Apply class-correlated blur to the training set
        blur_test: Apply class-correlated blur to the test set
        report_epoch: Epoch whose metrics sweep summaries report
    """

    variant: str
    seed: Optional[int] = None
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    optimizer: str = "adam"
    mc_train: int = MC_TRAIN
    mc_eval: int = MC_EVAL
    gamma: Optional[float] = None
    kl_scale: Optional[float] = None
    pair_epsilon: float = PAIR_EPSILON
    bins: int = CALIBRATION_BINS
    col_threshold: float = COL_THRESHOLD
    conv1_channels: int = CONV1_CHANNELS
    conv2_channels: int = CONV2_CHANNELS
    hidden: int = HIDDEN_WIDTH
    rho_init: float = RHO_INIT
    subset_fraction: float = 1.0
    blur_train: bool = False
    blur_test: bool = False
    report_epoch: int = REPORT_EPOCH

    def __post_init__(self) -> None:
        """Check ranges that do not depend on the model."""
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch size must be positive, got {self.batch_size}")
        if self.mc_train < 1 or self.mc_eval < 1:
            raise ValidationError("Monte Carlo sample counts must be positive")
        if self.bins < 1:
            raise ValidationError(f"bin count must be positive, got {self.bins}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValidationError(f"subset fraction must lie in (0, 1], got {self.subset_fraction}")

    @property
    def effective_gamma(self) -> float:
        """Gamma actually used: the explicit value, else GAMMA_CC for btcnn-cc and 0 otherwise."""
        if self.gamma is not None:
            return self.gamma
        return GAMMA_CC if self.variant in CONSISTENCY_VARIANTS else 0.0

    def require_seed(self) -> int:
        """Return the seed, refusing to run without one."""
        if self.seed is None:
            raise ValidationError("a seed is required for every run")
        return self.seed

    def model_spec(self) -> ModelSpec:
        """Build the validated architecture for this run."""
        return ModelSpec.for_variant(
            self.variant,
            conv1_channels=self.conv1_channels,
            conv2_channels=self.conv2_channels,
            hidden=self.hidden,
            col_threshold=self.col_threshold,
            gamma=self.effective_gamma,
            rho_init=self.rho_init,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Rebuild a config from a snapshot, ignoring unknown keys."""
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})
