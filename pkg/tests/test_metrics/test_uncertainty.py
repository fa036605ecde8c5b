import numpy as np
import pytest

from btcnn.metrics.uncertainty import decompose_uncertainty, entropy_bits, predict_ensemble
from btcnn.models.model_spec import ModelSpec
from btcnn.models.reports import PredictionEnsemble
from btcnn.services.model_service import ModelService
from btcnn.utils.errors import ValidationError


def test_entropy_examples() -> None:
    """Test uniform, one-hot and two-way entropies in bits."""
    # Execute / Verify
    assert entropy_bits(np.full(10, 0.1)) == pytest.approx(np.log2(10))
    assert entropy_bits(np.eye(10)[3]) == 0.0
    assert entropy_bits(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(1.0)


def test_entropy_rejects_negative_entries() -> None:
    """Test that negative probabilities are rejected."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        entropy_bits(np.array([1.2, -0.2]))


def test_disagreeing_one_hot_members() -> None:
    """Test (1,0) and (0,1) members: total 1, aleatoric 0, epistemic 1."""
    # Setup
    ens = PredictionEnsemble.from_members(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))

    # Execute
    report = decompose_uncertainty(ens)

    # Verify
    assert report.total[0] == pytest.approx(1.0)
    assert report.aleatoric[0] == 0.0
    assert report.epistemic[0] == pytest.approx(1.0)


def test_identical_flat_members() -> None:
    """Test two (0.5, 0.5) members: total 1, aleatoric 1, epistemic exactly 0."""
    # Setup
    ens = PredictionEnsemble.from_members(np.array([[[0.5, 0.5]], [[0.5, 0.5]]]))

    # Execute
    report = decompose_uncertainty(ens)

    # Verify
    assert report.total[0] == pytest.approx(1.0)
    assert report.aleatoric[0] == pytest.approx(1.0)
    assert report.epistemic[0] == 0.0


def test_identical_members_have_zero_epistemic(rng: np.random.Generator) -> None:
    """Test exactly zero epistemic uncertainty when all members agree."""
    # Setup
    row = rng.dirichlet(np.ones(10), size=5)
    ens = PredictionEnsemble.from_members(np.stack([row] * 7))

    # Execute
    report = decompose_uncertainty(ens)

    # Verify
    assert np.all(report.epistemic == 0.0)


def test_jensen_on_random_ensembles() -> None:
    """Test epistemic >= -1e-9 and total <= log2 C on 1e4 random ensembles."""
    # Setup
    gen = np.random.default_rng(8)
    members = gen.dirichlet(np.full(10, 0.3), size=(6, 10_000))

    # Execute
    report = decompose_uncertainty(PredictionEnsemble.from_members(members))

    # Verify
    assert np.all(report.epistemic >= -1e-9)
    assert np.all(report.total <= np.log2(10) + 1e-9)
    assert np.all(report.aleatoric >= 0.0)
    assert np.allclose(report.epistemic, report.total - report.aleatoric)


def test_member_permutation_invariance(rng: np.random.Generator) -> None:
    """Test that reordering members leaves the decomposition unchanged."""
    # Setup
    members = rng.dirichlet(np.ones(4), size=(5, 3))

    # Execute
    a = decompose_uncertainty(PredictionEnsemble.from_members(members))
    b = decompose_uncertainty(PredictionEnsemble.from_members(members[::-1]))

    # Verify
    assert a.total == pytest.approx(b.total)
    assert a.epistemic == pytest.approx(b.epistemic)


def _tiny_model(variant: str, seed: int = 0):
    spec = ModelSpec.for_variant(variant, conv1_channels=4, conv2_channels=6, hidden=8)
    return ModelService().build_model(spec, np.random.default_rng(seed))


def test_deterministic_model_yields_identical_members(rng: np.random.Generator) -> None:
    """Test that a cnn ensemble has S identical members equal to a single pass."""
    # Setup
    model = _tiny_model("cnn")
    x = rng.uniform(size=(3, 1, 16, 16))

    # Execute
    ens = predict_ensemble(model, x, 5, rng)
    single = predict_ensemble(model, x, 1, rng)

    # Verify
    assert ens.num_members == 5
    assert np.all(ens.member_probs == ens.member_probs[:1])
    assert np.array_equal(ens.mean_probs, single.mean_probs)
    assert np.all(decompose_uncertainty(ens).epistemic == 0.0)


def test_bayesian_ensemble_members_differ(rng: np.random.Generator) -> None:
    """Test that Bayesian members differ and S=1 equals its only member."""
    # Setup
    model = _tiny_model("bnn")
    x = rng.uniform(size=(2, 1, 16, 16))

    # Execute
    ens = predict_ensemble(model, x, 4, rng)
    one = predict_ensemble(model, x, 1, rng)

    # Verify
    assert not np.allclose(ens.member_probs[0], ens.member_probs[1])
    assert np.array_equal(one.mean_probs, one.member_probs[0])


def test_ensemble_rejects_zero_samples(rng: np.random.Generator) -> None:
    """Test that S must be positive."""
    # Execute / Verify
    with pytest.raises(ValidationError):
        predict_ensemble(_tiny_model("cnn"), np.zeros((1, 1, 16, 16)), 0, rng)
