"""Per-epoch metrics and metadata collected while training."""
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import pandas as pd

from ..utils.config import PLATEAU_TOLERANCE
from ..utils.errors import ValidationError
from .reports import CalibrationReport


@dataclass
class EpochRow:
    """Metrics of one completed epoch."""

    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    ece: float
    mce: float
    wall_time: float


@dataclass(eq=False)
class RunRecord:
    """
    Everything a training run produced.

    Attributes:
        variant: Model variant
        seed: Master seed of the run
        config: RunConfig snapshot; enough to reproduce the run
        rows: One EpochRow per completed epoch
        parameter_count: Trainable scalars in the model
        dense_parameter_count: Trainable scalars in the two dense layers
        peak_rss_mb: Peak resident memory of the training process, MiB
        final_calibration: CalibrationReport of the last evaluation, if any
    """

    variant: str
    seed: int
    config: dict
    rows: List[EpochRow] = field(default_factory=list)
    parameter_count: int = 0
    dense_parameter_count: int = 0
    peak_rss_mb: float = 0.0
    final_calibration: Optional[CalibrationReport] = None

    def to_frame(self) -> pd.DataFrame:
        """Per-epoch table, one row per epoch."""
        columns = [f for f in EpochRow.__dataclass_fields__]
        return pd.DataFrame([asdict(r) for r in self.rows], columns=columns)

    def row_at(self, epoch: int) -> EpochRow:
        """
        Return the row of `epoch`, or the last row when the run was shorter.

        Raises:
            ValidationError: If the run has no rows
        """
        if not self.rows:
            raise ValidationError("run has no completed epochs")
        index = min(max(epoch, 1), len(self.rows)) - 1
        return self.rows[index]

    @property
    def final_row(self) -> EpochRow:
        return self.row_at(len(self.rows))

    def plateau_epoch(self, tolerance: float = PLATEAU_TOLERANCE) -> Optional[int]:
        """
        First epoch after which the test loss never improves by more than `tolerance`.

        Improvement is measured relative to the best loss seen so far.

        Returns:
            The epoch number, or None for runs without rows
        """
        if not self.rows:
            return None
        losses = [r.test_loss for r in self.rows]
        plateau = 1
        best = losses[0]
        for i, loss in enumerate(losses[1:], start=2):
            if loss < best * (1.0 - tolerance):
                plateau = i
            best = min(best, loss)
        return plateau
