from typing import TYPE_CHECKING, Callable, Tuple

import numpy as np
import pytest

from btcnn.models.dataset import BlurPolicy, Dataset, probe_pairs
from btcnn.models.model_spec import ModelSpec
from btcnn.models.run_config import RunConfig
from btcnn.models.run_record import EpochRow, RunRecord
from btcnn.services.experiment_service import (
    ExperimentService,
    SweepJob,
    check_sweep_gamma,
    job_seeds,
    variant_gamma,
)
from btcnn.services.model_service import ModelService
from btcnn.utils.errors import ValidationError

if TYPE_CHECKING:
    from pytest_mock.plugin import MockerFixture


def fake_record(variant: str, losses) -> RunRecord:
    rows = [EpochRow(e, loss, 0.5, loss, 0.6 + 0.01 * e, 0.05, 0.1, 1.0)
            for e, loss in enumerate(losses, start=1)]
    return RunRecord(variant=variant, seed=0, config={}, rows=rows, parameter_count=100)


def fake_job(variant: str, fraction: float, repeat: int) -> SweepJob:
    return SweepJob(variant, fraction, repeat, 1, 2, {})


def tiny_model(variant: str):
    spec = ModelSpec.for_variant(variant, conv1_channels=4, conv2_channels=6, hidden=8)
    return ModelService().build_model(spec, np.random.default_rng(0))


def test_job_seeds_are_shared_across_variants() -> None:
    """Test that seeds depend on the cell only and differ between cells."""
    # Execute / Verify
    assert job_seeds(1, 0.5, 0) == job_seeds(1, 0.5, 0)
    assert job_seeds(1, 0.5, 0) != job_seeds(1, 0.5, 1)
    assert job_seeds(1, 0.5, 0) != job_seeds(1, 0.25, 0)
    assert job_seeds(1, 0.5, 0) != job_seeds(2, 0.5, 0)


def test_run_single_starves(
    small_datasets: Tuple[Dataset, Dataset],
    small_config: Callable[..., RunConfig],
    mocker: "MockerFixture"
) -> None:
    """Test that run_single trains on round(fraction * N) images."""
    # Setup
    train, test = small_datasets
    service = ExperimentService()
    run = mocker.patch.object(service.training_service, "run", return_value=(None, None))

    # Execute
    service.run_single(small_config("cnn", subset_fraction=0.5), train, test)

    # Verify
    assert len(run.call_args[0][1]) == 30
    assert run.call_args[0][2] is test


def test_blur_datasets_selects_splits(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that only the requested split is blurred."""
    # Setup
    train, test = small_datasets

    # Execute
    blurred_train, same_test = ExperimentService().blur_datasets(
        train, test, BlurPolicy.default(), seed=1, blur_train=True, blur_test=False
    )

    # Verify
    assert same_test is test
    assert not np.array_equal(blurred_train.images, train.images)
    assert np.array_equal(blurred_train.labels, train.labels)


def test_sweep_runs_every_cell(
    small_datasets: Tuple[Dataset, Dataset],
    small_config: Callable[..., RunConfig]
) -> None:
    """Test a two-variant, two-fraction, two-repeat sweep in process."""
    # Setup
    train, test = small_datasets
    base = small_config(epochs=1, mc_eval=2)

    # Execute
    results = ExperimentService().run_sweep(base, ["cnn", "tcnn"], train, test,
                                            fractions=[0.5, 1.0], repeats=2, workers=1)

    # Verify
    assert len(results) == 8
    assert [job.variant for job, _ in results[:4]] == ["cnn"] * 4
    sizes = {job.fraction: record.config["subset_fraction"] for job, record in results}
    assert sizes == {0.5: 0.5, 1.0: 1.0}
    cnn_seeds = [job.run_seed for job, _ in results[:4]]
    tcnn_seeds = [job.run_seed for job, _ in results[4:]]
    assert cnn_seeds == tcnn_seeds
    assert all(record.variant == job.variant for job, record in results)


def test_sweep_rejects_bad_arguments(
    small_datasets: Tuple[Dataset, Dataset],
    small_config: Callable[..., RunConfig]
) -> None:
    """Test the sweep argument checks."""
    # Setup
    train, test = small_datasets
    service = ExperimentService()

    # Execute / Verify
    with pytest.raises(ValidationError):
        service.run_sweep(small_config(), [], train, test)
    with pytest.raises(ValidationError):
        service.run_sweep(small_config(), ["cnn"], train, test, fractions=[0.0])
    with pytest.raises(ValidationError):
        service.run_sweep(small_config(), ["cnn"], train, test, repeats=0)


def test_sweep_gamma_reaches_only_consistency_variants(
    small_datasets: Tuple[Dataset, Dataset],
    small_config: Callable[..., RunConfig]
) -> None:
    """Test that a swept gamma trains btcnn-cc with it and the baselines without it."""
    # Setup
    train, test = small_datasets
    base = small_config("cnn", epochs=1, mc_eval=2, gamma=0.5)

    # Execute
    results = ExperimentService().run_sweep(base, ["cnn", "btcnn", "btcnn-cc"], train, test,
                                            fractions=[1.0], repeats=1, workers=1)

    # Verify
    gammas = {record.variant: record.config["gamma"] for _, record in results}
    assert gammas == {"cnn": 0.0, "btcnn": 0.0, "btcnn-cc": 0.5}


def test_sweep_gamma_checks() -> None:
    """Test which variant lists accept a consistency weight."""
    # Execute / Verify
    assert variant_gamma("btcnn-cc", 0.3) == 0.3
    assert variant_gamma("btcnn-cc", None) is None
    assert variant_gamma("bnn", 0.3) == 0.0
    check_sweep_gamma(0.3, ["cnn", "btcnn-cc"])
    check_sweep_gamma(None, ["cnn"])
    check_sweep_gamma(0.0, ["cnn"])
    with pytest.raises(ValidationError, match="gamma"):
        check_sweep_gamma(0.3, ["cnn", "bnn"])


def test_sweep_uses_process_pool(
    small_datasets: Tuple[Dataset, Dataset],
    small_config: Callable[..., RunConfig],
    mocker: "MockerFixture"
) -> None:
    """Test that several workers dispatch jobs through a spawn-context pool."""
    # Setup
    train, test = small_datasets
    context = mocker.patch("multiprocessing.get_context")
    pool = context.return_value.Pool.return_value.__enter__.return_value
    pool.map.side_effect = lambda fn, jobs: [fake_record(job.variant, [1.0]) for job in jobs]

    # Execute
    results = ExperimentService().run_sweep(small_config(), ["cnn"], train, test,
                                            fractions=[1.0], repeats=3, workers=2)

    # Verify
    context.assert_called_once_with("spawn")
    assert context.return_value.Pool.call_args[0][0] == 2
    assert len(results) == 3


def test_summarize_and_aggregate() -> None:
    """Test one summary row per run and mean/std per (variant, fraction)."""
    # Setup
    service = ExperimentService()
    results = [
        (fake_job("cnn", 0.5, 0), fake_record("cnn", [2.0, 1.0, 0.9])),
        (fake_job("cnn", 0.5, 1), fake_record("cnn", [2.0, 1.2, 1.1])),
        (fake_job("bnn", 0.5, 0), fake_record("bnn", [2.0])),
    ]

    # Execute
    summary = service.summarize(results, report_epoch=2)
    table = service.aggregate(summary)

    # Verify
    assert len(summary) == 3
    assert summary.loc[0, "test_loss_epoch2"] == 1.0
    assert summary.loc[0, "test_loss_final"] == 0.9
    assert summary.loc[2, "test_loss_epoch2"] == 2.0
    cnn = table[table["variant"] == "cnn"].iloc[0]
    assert cnn["runs"] == 2
    assert cnn["test_loss_epoch2_mean"] == pytest.approx(1.1)
    assert cnn["test_loss_epoch2_std"] == pytest.approx(np.std([1.0, 1.2], ddof=1))
    assert list(table["variant"]) == ["cnn", "bnn"]


def test_probe_all_pairs(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test 45 pairs times 10 alphas and exact endpoint images."""
    # Setup
    _, test = small_datasets

    # Execute
    per_pair, per_alpha, sweeps = ExperimentService().run_uq_probe(
        tiny_model("btcnn"), test, probe_pairs(), num_samples=3, seed=1
    )

    # Verify
    assert len(per_pair) == 450
    assert len(per_alpha) == 10
    assert len(sweeps) == 45
    assert np.array_equal(sweeps[(2, 7)][0], test.images[2])
    assert np.array_equal(sweeps[(2, 7)][-1], test.images[7])
    assert (per_pair["epistemic"] >= -1e-9).all()
    assert np.allclose(per_pair["total"], per_pair["aleatoric"] + per_pair["epistemic"])


def test_probe_deterministic_model_has_no_epistemic(
    small_datasets: Tuple[Dataset, Dataset]
) -> None:
    """Test that a cnn's probe reports zero epistemic uncertainty."""
    # Setup
    _, test = small_datasets

    # Execute
    per_pair, _, _ = ExperimentService().run_uq_probe(tiny_model("cnn"), test, [(0, 1)],
                                                      num_samples=4)

    # Verify
    assert len(per_pair) == 10
    assert (per_pair["epistemic"] == 0.0).all()


def test_probe_is_reproducible(small_datasets: Tuple[Dataset, Dataset]) -> None:
    """Test that one seed reproduces the probe."""
    # Setup
    _, test = small_datasets
    model = tiny_model("bnn")
    service = ExperimentService()

    # Execute
    a, _, _ = service.run_uq_probe(model, test, [(3, 5)], num_samples=4, seed=9)
    b, _, _ = service.run_uq_probe(model, test, [(3, 5)], num_samples=4, seed=9)

    # Verify
    assert a.equals(b)


def test_calibration_report(
    small_datasets: Tuple[Dataset, Dataset],
    mocker: "MockerFixture"
) -> None:
    """Test the report over the test set and the empty-bin warning."""
    # Setup
    _, test = small_datasets
    warning = mocker.patch("btcnn.services.experiment_service.logger.warning")

    # Execute
    report, acc = ExperimentService().calibration_report(tiny_model("cnn"), test, bins=15)

    # Verify
    assert report.total == len(test)
    assert 0.0 <= report.ece <= report.mce <= 1.0
    assert 0.0 <= acc <= 1.0
    warning.assert_called_once()
