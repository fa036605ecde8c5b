"""Minibatch training with per-epoch evaluation."""
import logging
import sys
import time
from typing import Dict, Optional, Tuple

import numpy as np
import psutil

from ..layers.network import Network
from ..metrics.calibration import compute_calibration
from ..metrics.uncertainty import predict_ensemble
from ..models.dataset import Dataset
from ..models.run_config import RunConfig
from ..models.run_record import EpochRow, RunRecord
from ..nn.optim import Optimizer, OptimizerState
from ..nn.tensor import no_grad
from ..training.objective import LossConfig, objective_terms
from ..utils.config import CALIBRATION_BINS, MC_EVAL
from ..utils.errors import StateError, ValidationError
from .model_service import ModelService

try:
    import resource
except ImportError:  # Windows
    resource = None

logger = logging.getLogger(__name__)

_STREAMS = ("init", "shuffle", "draws", "eval")


def seed_streams(seed: int) -> Dict[str, np.random.Generator]:
    """
    Derive the independent random streams of one run from its master seed.

    The same seed always yields the same streams, whatever the variant, so two
    architectures built from identical layer kinds start from identical weights.
    """
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, children)}


def peak_rss_mb() -> float:
    """
    Peak resident memory of this process so far, MiB.

    psutil reports the peak only on Windows (`peak_wset`); elsewhere it comes from
    `ru_maxrss`, which Linux gives in KiB and macOS in bytes.
    """
    info = psutil.Process().memory_info()
    if hasattr(info, "peak_wset"):
        return info.peak_wset / 2 ** 20
    if resource is not None:
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return peak / 2 ** 20 if sys.platform == "darwin" else peak / 2 ** 10
    return info.rss / 2 ** 20


class TrainingService:
    """Minibatch training with per-epoch evaluation."""

    def __init__(self, model_service: Optional[ModelService] = None) -> None:
        """
        Initialize the service.

        Args:
            model_service: Builder used by `run`; a fresh one when None
        """
        self.model_service = model_service or ModelService()

    def run(
        self,
        config: RunConfig,
        train_ds: Dataset,
        test_ds: Dataset
    ) -> Tuple[Network, RunRecord]:
        """
        Build the model named by `config` and train it.

        Args:
            config: Every setting of the run; the seed is required
            train_ds: Training set, already starved or blurred
            test_ds: Test set

        Returns:
            Tuple of (trained model, run record)
        """
        seed = config.require_seed()
        streams = seed_streams(seed)
        model = self.model_service.build_model(config.model_spec(), streams["init"])

        num_batches = max(1, -(-len(train_ds) // config.batch_size))
        kl_scale = config.kl_scale if config.kl_scale is not None else 1.0 / num_batches
        loss_cfg = LossConfig(
            mc_samples=config.mc_train,
            gamma=config.effective_gamma,
            kl_scale=kl_scale,
            pair_epsilon=config.pair_epsilon,
        )
        state = OptimizerState(learning_rate=config.learning_rate,
                               adaptive=config.optimizer == "adam")
        record = self.train(
            model, train_ds, test_ds,
            epochs=config.epochs,
            batch_size=config.batch_size,
            loss_cfg=loss_cfg,
            seed=seed,
            mc_eval=config.mc_eval,
            bins=config.bins,
            optimizer_state=state,
            config=config.to_dict(),
        )
        return model, record

    def train(
        self,
        model: Network,
        train_ds: Dataset,
        test_ds: Dataset,
        epochs: int,
        batch_size: int,
        loss_cfg: LossConfig,
        seed: int,
        mc_eval: int = MC_EVAL,
        bins: int = CALIBRATION_BINS,
        optimizer_state: Optional[OptimizerState] = None,
        config: Optional[dict] = None
    ) -> RunRecord:
        """
        Train for `epochs` shuffled minibatch epochs, evaluating after each one.

        Evaluation computes the test loss with the training objective (fresh draws, no
        update), then accuracy, ECE and MCE of the S-member averaged predictions.

        Args:
            model: Network to train in place
            train_ds: Training set
            test_ds: Test set
            epochs: Number of epochs; 0 returns a record without rows
            batch_size: Minibatch size
            loss_cfg: Objective settings
            seed: Master seed of the shuffling and posterior-draw streams
            mc_eval: Ensemble size S
            bins: Calibration bins M
            optimizer_state: Optimizer settings; Adam defaults when None
            config: Snapshot stored in the record

        Returns:
            The run record

        Raises:
            ValidationError: For empty datasets or a non-positive batch size
            StateError: If the loss becomes non-finite
        """
        if len(train_ds) == 0 or len(test_ds) == 0:
            raise ValidationError("training and test sets must be non-empty")
        if batch_size < 1:
            raise ValidationError(f"batch size must be positive, got {batch_size}")

        streams = seed_streams(seed)
        optimizer = Optimizer(model.parameters(), optimizer_state or OptimizerState())
        optimizer.zero_grad()
        record = RunRecord(
            variant=model.spec.variant,
            seed=seed,
            config=dict(config) if config is not None else {},
            parameter_count=model.parameter_count(),
            dense_parameter_count=model.dense_parameter_count(),
            peak_rss_mb=peak_rss_mb(),
        )
        logger.info(
            f"Training {model.spec.variant} for {epochs} epochs on {len(train_ds)} images "
            f"({record.parameter_count} parameters, seed {seed})"
        )

        for epoch in range(1, epochs + 1):
            started = time.perf_counter()
            train_loss, train_accuracy = self._train_epoch(
                model, optimizer, train_ds, batch_size, loss_cfg, streams, epoch
            )
            test_loss = self.evaluate_loss(model, test_ds, batch_size, loss_cfg, streams["draws"])
            ensemble = predict_ensemble(model, test_ds.images, mc_eval, streams["eval"],
                                        batch_size)
            report = compute_calibration(ensemble.mean_probs, test_ds.labels, bins)
            test_accuracy = float(np.mean(ensemble.mean_probs.argmax(axis=1) == test_ds.labels))
            row = EpochRow(
                epoch=epoch,
                train_loss=train_loss,
                train_accuracy=train_accuracy,
                test_loss=test_loss,
                test_accuracy=test_accuracy,
                ece=report.ece,
                mce=report.mce,
                wall_time=time.perf_counter() - started,
            )
            record.rows.append(row)
            record.final_calibration = report
            record.peak_rss_mb = max(record.peak_rss_mb, peak_rss_mb())
            logger.info(
                f"[{model.spec.variant}] epoch {epoch}/{epochs}: train loss {train_loss:.4f} "
                f"acc {train_accuracy:.4f} | test loss {test_loss:.4f} acc {test_accuracy:.4f} "
                f"ECE {report.ece:.4f} MCE {report.mce:.4f} ({row.wall_time:.1f}s)"
            )
        return record

    def _train_epoch(
        self,
        model: Network,
        optimizer: Optimizer,
        train_ds: Dataset,
        batch_size: int,
        loss_cfg: LossConfig,
        streams: Dict[str, np.random.Generator],
        epoch: int
    ) -> Tuple[float, float]:
        n = len(train_ds)
        order = streams["shuffle"].permutation(n)
        loss_sum = 0.0
        correct = 0
        for batch_index, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            images, labels = train_ds.images[idx], train_ds.labels[idx]
            terms = objective_terms(model, (images, labels), loss_cfg, streams["draws"])
            value = terms.loss.item()
            if not np.isfinite(value):
                raise StateError(f"loss became {value} at epoch {epoch}, batch {batch_index}")
            terms.loss.backward()
            optimizer.step()
            model.after_step()

            loss_sum += value * len(idx)
            correct += int(np.sum(terms.probs.argmax(axis=1) == labels))
            logger.debug(
                f"epoch {epoch} batch {batch_index}: loss {value:.4f} (nll {terms.nll:.4f}, "
                f"kl {terms.kl:.2f}, cc {terms.consistency:.4f})"
            )
        return loss_sum / n, correct / n

    def evaluate_loss(
        self,
        model: Network,
        ds: Dataset,
        batch_size: int,
        loss_cfg: LossConfig,
        rng: Optional[np.random.Generator]
    ) -> float:
        """Mean objective over `ds` without gradient tracking or parameter updates."""
        total = 0.0
        with no_grad():
            for start in range(0, len(ds), batch_size):
                images = ds.images[start:start + batch_size]
                labels = ds.labels[start:start + batch_size]
                terms = objective_terms(model, (images, labels), loss_cfg, rng)
                total += terms.loss.item() * len(labels)
        return total / len(ds)
