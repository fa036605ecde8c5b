"""
Experiment protocols built on the training service.

Covers single runs, data-starvation and blurred sweeps, uncertainty probes and
calibration reports.

Sweep jobs are independent; with more than one worker they run in a spawn-context
process pool and the results are identical to the in-process order.
"""
import logging
import multiprocessing
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import psutil

from ..layers.network import Network
from ..metrics.calibration import compute_calibration
from ..metrics.uncertainty import decompose_uncertainty, predict_ensemble
from ..models.dataset import BlurPolicy, Dataset, ProbeConfig, default_alphas
from ..models.model_spec import CONSISTENCY_VARIANTS
from ..models.reports import CalibrationReport
from ..models.run_config import RunConfig
from ..models.run_record import RunRecord
from ..utils.config import (
    CALIBRATION_BINS,
    MC_EVAL,
    REPEATS,
    STARVATION_FRACTIONS,
)
from ..utils.errors import ValidationError
from .perturbation import apply_class_blur, convex_probe, first_index_per_class, starve
from .training_service import TrainingService

logger = logging.getLogger(__name__)

METRICS = ("train_loss", "train_accuracy", "test_loss", "test_accuracy", "ece", "mce")

# Datasets shared with pool workers, set once per process by _init_worker.
_WORKER_DATA: Dict[str, Dataset] = {}


@dataclass(frozen=True)
class SweepJob:
    """One (variant, fraction, repeat) training run of a sweep."""

    variant: str
    fraction: float
    repeat: int
    subset_seed: int
    run_seed: int
    base_config: dict

    @property
    def run_name(self) -> str:
        return f"{self.variant}-f{self.fraction:.2f}-r{self.repeat}"


def job_seeds(seed: int, fraction: float, repeat: int) -> Tuple[int, int]:
    """
    Derive (subset seed, run seed) for one sweep cell.

    Every variant of the same (fraction, repeat) cell trains on the same subset from
    the same seed.
    """
    sequence = np.random.SeedSequence([seed, repeat, int(round(fraction * 10_000))])
    subset_seed, run_seed = sequence.generate_state(2)
    return int(subset_seed), int(run_seed)


def check_sweep_gamma(gamma: Optional[float], variants: Sequence[str]) -> None:
    """
    Refuse a consistency weight that no variant of the sweep can use.

    Raises:
        ValidationError: If gamma > 0 and no variant has the consistency condition
    """
    if gamma and not any(v in CONSISTENCY_VARIANTS for v in variants):
        raise ValidationError(
            f"gamma={gamma} needs one of {CONSISTENCY_VARIANTS} among the variants {list(variants)}"
        )


def variant_gamma(variant: str, gamma: Optional[float]) -> Optional[float]:
    """Gamma a sweep passes to `variant`; variants without the consistency condition get 0."""
    return gamma if variant in CONSISTENCY_VARIANTS else 0.0


def default_workers() -> int:
    """Physical core count, falling back to 1."""
    return psutil.cpu_count(logical=False) or 1


def _init_worker(train_ds: Dataset, test_ds: Dataset, log_level: int) -> None:
    logging.basicConfig(level=log_level, format="%(levelname)s: %(message)s")
    _WORKER_DATA["train"] = train_ds
    _WORKER_DATA["test"] = test_ds


def _run_job(job: SweepJob) -> RunRecord:
    train_ds = starve(_WORKER_DATA["train"], job.fraction, job.subset_seed)
    config = RunConfig.from_dict({
        **job.base_config,
        "variant": job.variant,
        "gamma": variant_gamma(job.variant, job.base_config.get("gamma")),
        "seed": job.run_seed,
        "subset_fraction": job.fraction,
    })
    logger.info(f"Starting {job.run_name} ({len(train_ds)} training images)")
    _, record = TrainingService().run(config, train_ds, _WORKER_DATA["test"])
    return record


class ExperimentService:
    """Runs the experiment protocols and shapes their results into tables."""

    def __init__(self, training_service: Optional[TrainingService] = None) -> None:
        """
        Initialize the service.

        Args:
            training_service: Trainer used for single runs
        """
        self.training_service = training_service or TrainingService()

    def run_single(
        self,
        config: RunConfig,
        train_ds: Dataset,
        test_ds: Dataset
    ) -> Tuple[Network, RunRecord]:
        """
        Starve the training set per `config.subset_fraction`, then train once.

        Blur, when requested, is applied by the caller through `blur_datasets`.
        """
        seed = config.require_seed()
        if config.subset_fraction < 1.0:
            train_ds = starve(train_ds, config.subset_fraction, seed)
        return self.training_service.run(config, train_ds, test_ds)

    def blur_datasets(
        self,
        train_ds: Dataset,
        test_ds: Dataset,
        policy: BlurPolicy,
        seed: int,
        blur_train: bool,
        blur_test: bool
    ) -> Tuple[Dataset, Dataset]:
        """
        Apply class-correlated blur to the selected splits.

        The two splits draw their sigmas from separate streams of `seed`.
        """
        train_seed, test_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
        if blur_train:
            train_ds = apply_class_blur(train_ds, policy, train_seed)
        if blur_test:
            test_ds = apply_class_blur(test_ds, policy, test_seed)
        return train_ds, test_ds

    def run_sweep(
        self,
        base: RunConfig,
        variants: Sequence[str],
        train_ds: Dataset,
        test_ds: Dataset,
        fractions: Sequence[float] = STARVATION_FRACTIONS,
        repeats: int = REPEATS,
        workers: int = 1
    ) -> List[Tuple[SweepJob, RunRecord]]:
        """
        Train every (variant, fraction, repeat) combination.

        Args:
            base: Settings shared by all runs; its seed is the sweep's master seed
            variants: Model variants
            train_ds: Full (possibly blurred) training set
            test_ds: Test set
            fractions: Training-set fractions
            repeats: Runs per (variant, fraction)
            workers: Worker processes; 1 runs in-process

        Returns:
            (job, record) pairs in variant, fraction, repeat order
        """
        if not variants:
            raise ValidationError("a sweep needs at least one variant")
        if repeats < 1:
            raise ValidationError(f"repeats must be positive, got {repeats}")
        for fraction in fractions:
            if not 0.0 < fraction <= 1.0:
                raise ValidationError(f"subset fraction must lie in (0, 1], got {fraction}")
        check_sweep_gamma(base.gamma, variants)
        seed = base.require_seed()
        base_config = base.to_dict()

        jobs = []
        for variant in variants:
            for fraction in fractions:
                for repeat in range(repeats):
                    subset_seed, run_seed = job_seeds(seed, fraction, repeat)
                    jobs.append(SweepJob(variant, float(fraction), repeat, subset_seed, run_seed,
                                         base_config))
        logger.info(f"Sweep of {len(jobs)} runs on {max(1, workers)} worker(s)")

        log_level = logging.getLogger().getEffectiveLevel()
        if workers <= 1 or len(jobs) == 1:
            _init_worker(train_ds, test_ds, log_level)
            records = [_run_job(job) for job in jobs]
        else:
            context = multiprocessing.get_context("spawn")
            with context.Pool(min(workers, len(jobs)), initializer=_init_worker,
                              initargs=(train_ds, test_ds, log_level)) as pool:
                records = pool.map(_run_job, jobs)
        return list(zip(jobs, records))

    def summarize(
        self,
        results: Sequence[Tuple[SweepJob, RunRecord]],
        report_epoch: int
    ) -> pd.DataFrame:
        """
        One row per run with metrics at `report_epoch` and at the final epoch.

        Runs shorter than `report_epoch` report their last epoch.
        """
        rows = []
        for job, record in results:
            row = {
                "variant": job.variant,
                "fraction": job.fraction,
                "repeat": job.repeat,
                "seed": job.run_seed,
                "epochs": len(record.rows),
                "parameter_count": record.parameter_count,
                "plateau_epoch": record.plateau_epoch(),
            }
            if record.rows:
                at_report = record.row_at(report_epoch)
                final = record.final_row
                for metric in METRICS:
                    row[f"{metric}_epoch{report_epoch}"] = getattr(at_report, metric)
                    row[f"{metric}_final"] = getattr(final, metric)
            rows.append(row)
        return pd.DataFrame(rows)

    def aggregate(self, summary: pd.DataFrame) -> pd.DataFrame:
        """Mean and standard deviation across repeats per (variant, fraction)."""
        keys = ["variant", "fraction"]
        values = [c for c in summary.columns
                  if c not in keys + ["repeat", "seed", "parameter_count"]]
        grouped = summary.groupby(keys, sort=False)[values]
        table = grouped.agg(["mean", "std"])
        table.columns = [f"{name}_{stat}" for name, stat in table.columns]
        table.insert(0, "runs", grouped.size())
        return table.reset_index()

    def run_uq_probe(
        self,
        model: Network,
        test_ds: Dataset,
        pairs: Sequence[Tuple[int, int]],
        num_samples: int = MC_EVAL,
        seed: int = 0,
        alphas: Optional[np.ndarray] = None
    ) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[Tuple[int, int], List[np.ndarray]]]:
        """
        Sweep convex combinations between the first test image of each class in a pair.

        Args:
            model: Trained network
            test_ds: Source of the endpoint images
            pairs: Class pairs (a, b), a < b
            num_samples: Ensemble size S
            seed: Seed of the posterior draws
            alphas: Interpolation weights; ten evenly spaced values when None

        Returns:
            Tuple of (per-pair rows a, b, alpha, total, aleatoric, epistemic;
            per-alpha means; the probe images of each pair)

        Raises:
            ValidationError: If a class of a pair is absent from the test set
        """
        alphas = default_alphas() if alphas is None else np.asarray(alphas, dtype=np.float64)
        rng = np.random.default_rng(seed)
        rows = []
        sweeps: Dict[Tuple[int, int], List[np.ndarray]] = {}
        for pair in pairs:
            cfg = ProbeConfig(pair, alphas)
            ia, ib = first_index_per_class(test_ds, cfg.pair)
            images = convex_probe(test_ds.images[ia], test_ds.images[ib], cfg)
            ensemble = predict_ensemble(model, np.stack(images), num_samples, rng)
            report = decompose_uncertainty(ensemble)
            for k, alpha in enumerate(cfg.alphas):
                rows.append({
                    "a": cfg.pair[0],
                    "b": cfg.pair[1],
                    "alpha": float(alpha),
                    "total": float(report.total[k]),
                    "aleatoric": float(report.aleatoric[k]),
                    "epistemic": float(report.epistemic[k]),
                })
            sweeps[cfg.pair] = images
            logger.debug(f"Probed pair {cfg.pair}: peak epistemic {report.epistemic.max():.4f}")

        per_pair = pd.DataFrame(rows, columns=["a", "b", "alpha", "total", "aleatoric",
                                               "epistemic"])
        per_alpha = (per_pair.groupby("alpha", sort=True)[["total", "aleatoric", "epistemic"]]
                     .mean().reset_index())
        logger.info(f"Probed {len(pairs)} pair(s) at {len(alphas)} alphas with S={num_samples}")
        return per_pair, per_alpha, sweeps

    def calibration_report(
        self,
        model: Network,
        test_ds: Dataset,
        num_samples: int = MC_EVAL,
        bins: int = CALIBRATION_BINS,
        seed: int = 0
    ) -> Tuple[CalibrationReport, float]:
        """
        Calibrate the S-member averaged predictions of `model` on `test_ds`.

        Returns:
            Tuple of (report, accuracy)
        """
        rng = np.random.default_rng(seed)
        ensemble = predict_ensemble(model, test_ds.images, num_samples, rng)
        report = compute_calibration(ensemble.mean_probs, test_ds.labels, bins)
        empty = int(np.sum(report.counts == 0))
        if empty:
            logger.warning(f"{empty} of {bins} calibration bins are empty")
        acc = float(np.mean(ensemble.mean_probs.argmax(axis=1) == test_ds.labels))
        logger.info(f"Calibration: accuracy {acc:.4f}, ECE {report.ece:.4f}, MCE {report.mce:.4f}")
        return report, acc
