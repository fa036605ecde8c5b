"""Handlers of the `btcnn` subcommands; every failure surfaces as a StageError."""
import argparse
import logging
from contextlib import contextmanager
from typing import Iterator, List, Tuple

from ..layers.network import Network
from ..models.dataset import BlurPolicy, Dataset, probe_pairs
from ..models.run_config import RunConfig
from ..models.run_record import RunRecord
from ..services.data_service import DataService
from ..services.experiment_service import ExperimentService, check_sweep_gamma, default_workers
from ..services.model_service import ModelService
from ..services.results_service import ResultsService
from ..services.training_service import TrainingService, seed_streams
from ..utils.config import NUM_CLASSES, REPORT_EPOCH, VARIANTS
from ..utils.errors import StageError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_VARIANT = "btcnn"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Run a block as the named stage, wrapping any failure in a StageError."""
    logger.debug(f"Stage {name} started")
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}", exc_info=True)
        raise StageError(name, e) from e
    logger.debug(f"Stage {name} finished")


def build_config(args: argparse.Namespace, variant: str) -> RunConfig:
    """Collect the run settings of one variant from the parsed flags."""
    return RunConfig(
        variant=variant,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        mc_train=args.mc_train,
        mc_eval=args.mc_eval,
        gamma=args.gamma,
        bins=args.bins,
        col_threshold=args.col_threshold,
        hidden=args.hidden,
        subset_fraction=args.subset_fraction,
        blur_train=args.blur_train,
        blur_test=args.blur_test,
        report_epoch=getattr(args, "report_epoch", REPORT_EPOCH),
    )


def _single_variant(args: argparse.Namespace) -> str:
    variants = args.model or [DEFAULT_VARIANT]
    if len(variants) != 1:
        raise ValidationError(f"{args.command} takes a single --model, got {variants}")
    return variants[0]


def _load(args: argparse.Namespace) -> Tuple[Dataset, Dataset]:
    with stage("load-data"):
        return DataService(args.cache_dir).load_usps(args.data_train, args.data_test)


def _perturb(
    args: argparse.Namespace,
    train_ds: Dataset,
    test_ds: Dataset,
    blur_train: bool,
    blur_test: bool
) -> Tuple[Dataset, Dataset]:
    if not (blur_train or blur_test):
        return train_ds, test_ds
    with stage("perturb-data"):
        return ExperimentService().blur_datasets(train_ds, test_ds, BlurPolicy.default(),
                                                 args.seed, blur_train, blur_test)


def _trained_model(
    args: argparse.Namespace,
    train_ds: Dataset,
    test_ds: Dataset
) -> Tuple[Network, RunConfig, RunRecord]:
    with stage("build-model"):
        config = build_config(args, _single_variant(args))
        spec = config.model_spec()
    if getattr(args, "weights", None) is not None:
        with stage("build-model"):
            model_service = ModelService()
            model = model_service.build_model(spec, seed_streams(config.require_seed())["init"])
            model_service.load_parameters(model, args.weights)
        record = RunRecord(config.variant, config.seed, config.to_dict(),
                           parameter_count=model.parameter_count(),
                           dense_parameter_count=model.dense_parameter_count())
        return model, config, record
    with stage("train"):
        model, record = ExperimentService().run_single(config, train_ds, test_ds)
    return model, config, record


def cmd_train(args: argparse.Namespace) -> None:
    """Train one model; write epochs.csv, config.json, calibration_bins.csv."""
    train_ds, test_ds = _load(args)
    train_ds, test_ds = _perturb(args, train_ds, test_ds, args.blur_train, args.blur_test)
    model, config, record = _trained_model(args, train_ds, test_ds)
    with stage("write-results"):
        results = ResultsService(args.out)
        extra = {"blur_policy": BlurPolicy.default().to_dict()} if (
            config.blur_train or config.blur_test) else None
        results.write_run(record, f"{config.variant}-seed{config.seed}", extra)
        if args.save_weights is not None:
            ModelService().save_parameters(model, args.save_weights)
    if record.rows:
        final = record.final_row
        print(f"{config.variant}: test accuracy {final.test_accuracy:.4f}, "
              f"ECE {final.ece:.4f}, MCE {final.mce:.4f}")


def _sweep(args: argparse.Namespace, train_ds: Dataset, test_ds: Dataset, extra: dict) -> None:
    variants: List[str] = args.model or list(VARIANTS)
    service = ExperimentService()
    workers = args.workers if args.workers is not None else default_workers()
    with stage("build-model"):
        check_sweep_gamma(args.gamma, variants)
        base = build_config(args, variants[0])
    with stage("train"):
        results = service.run_sweep(base, variants, train_ds, test_ds,
                                    fractions=args.fractions, repeats=args.repeats,
                                    workers=workers)
    with stage("write-results"):
        out = ResultsService(args.out)
        for job, record in results:
            out.write_run(record, job.run_name, extra)
        summary = service.summarize(results, args.report_epoch)
        aggregate = service.aggregate(summary)
        out.write_table(summary, "summary.csv")
        out.write_table(aggregate, "aggregate.csv")
    print(aggregate.to_string(index=False))


def cmd_starve(args: argparse.Namespace) -> None:
    """Sweep training-set fractions for every requested variant."""
    train_ds, test_ds = _load(args)
    train_ds, test_ds = _perturb(args, train_ds, test_ds, args.blur_train, args.blur_test)
    _sweep(args, train_ds, test_ds, {})


def cmd_blur_train(args: argparse.Namespace) -> None:
    """
    Sweep fractions on class-blurred data.

    Without --blur-train/--blur-test both splits are blurred.
    """
    blur_train, blur_test = args.blur_train, args.blur_test
    if not (blur_train or blur_test):
        blur_train = blur_test = True
        args.blur_train = args.blur_test = True
    train_ds, test_ds = _load(args)
    train_ds, test_ds = _perturb(args, train_ds, test_ds, blur_train, blur_test)
    if args.preview:
        with stage("write-results"):
            source = train_ds if blur_train else test_ds
            indices = [int((source.labels == c).argmax()) for c in range(NUM_CLASSES)
                       if (source.labels == c).any()]
            ResultsService(args.out).write_preview(
                [source.images[i] for i in indices], "blur_preview.png",
                captions=[str(source.labels[i]) for i in indices],
            )
    _sweep(args, train_ds, test_ds, {"blur_policy": BlurPolicy.default().to_dict()})


def cmd_uq_probe(args: argparse.Namespace) -> None:
    """Write per-pair and per-alpha uncertainty tables for convex-combination probes."""
    train_ds, test_ds = _load(args)
    train_ds, test_ds = _perturb(args, train_ds, test_ds, args.blur_train, args.blur_test)
    model, config, _ = _trained_model(args, train_ds, test_ds)
    with stage("probe"):
        per_pair, per_alpha, sweeps = ExperimentService().run_uq_probe(
            model, test_ds, probe_pairs(args.pair), config.mc_eval, config.require_seed()
        )
    with stage("write-results"):
        out = ResultsService(args.out)
        out.write_table(per_pair, "probe_pairs.csv")
        out.write_table(per_alpha, "probe_alpha_mean.csv")
        if args.preview:
            for (a, b), images in sweeps.items():
                out.write_preview(images, f"probe_{a}_{b}.png")
    print(per_alpha.to_string(index=False))


def cmd_calib_report(args: argparse.Namespace) -> None:
    """Write the per-bin calibration table of a trained model."""
    train_ds, test_ds = _load(args)
    train_ds, test_ds = _perturb(args, train_ds, test_ds, args.blur_train, args.blur_test)
    model, config, _ = _trained_model(args, train_ds, test_ds)
    with stage("evaluate"):
        report, acc = ExperimentService().calibration_report(
            model, test_ds, config.mc_eval, config.bins, config.require_seed()
        )
    with stage("write-results"):
        out = ResultsService(args.out)
        out.write_table(report.to_frame(), "calibration_bins.csv")
        out.write_json({"variant": config.variant, "accuracy": acc, "ece": report.ece,
                        "mce": report.mce, "bins": report.num_bins, "config": config.to_dict()},
                       "calibration.json")
    print(report.to_frame().to_string(index=False))
    print(f"accuracy {acc:.4f}  ECE {report.ece:.4f}  MCE {report.mce:.4f}")


HANDLERS = {
    "train": cmd_train,
    "starve": cmd_starve,
    "blur-train": cmd_blur_train,
    "uq-probe": cmd_uq_probe,
    "calib-report": cmd_calib_report,
}
