"""Building networks from a ModelSpec and persisting their parameters."""
import logging
from pathlib import Path

import numpy as np

from ..layers.bayes import BayesianDense
from ..layers.network import Network
from ..layers.topology import CircleFilterLayer, CircleOneLayer
from ..models.model_spec import ModelSpec
from ..nn.layers import Conv2d, Dense, Flatten, MaxPool2d, ReLU
from ..utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)


class ModelService:
    """Builds networks from specs and persists their parameters."""

    def build_model(self, spec: ModelSpec, rng: np.random.Generator) -> Network:
        """
        Assemble the fixed pipeline with the layer kinds named by `spec`.

        input [B,1,16,16] -> conv1(pad 1) -> maxpool -> relu -> conv2(pad 1) -> maxpool
        -> relu -> flatten -> dense(hidden) -> relu -> dense(classes); softmax is applied
        by the objective and the predictors.

        Args:
            spec: Architecture
            rng: Initialization stream

        Returns:
            The network

        Raises:
            ValidationError: If the model spec is inconsistent
        """
        spec.validate()
        k = spec.kernel_size
        pad = k // 2

        if spec.conv1 == "circle-filter":
            conv1 = CircleFilterLayer(spec.conv1_channels, k)
        else:
            conv1 = Conv2d(1, spec.conv1_channels, k, pad, rng)

        if spec.conv2 == "circle-one":
            in_points = conv1.angles if isinstance(conv1, CircleFilterLayer) else None
            conv2 = CircleOneLayer(spec.conv1_channels, spec.conv2_channels, k,
                                   spec.col_threshold, rng, in_points=in_points)
        else:
            conv2 = Conv2d(spec.conv1_channels, spec.conv2_channels, k, pad, rng)

        if spec.is_bayesian:
            dense1 = BayesianDense(spec.flat_features, spec.hidden, rng, spec.rho_init)
            dense2 = BayesianDense(spec.hidden, spec.num_classes, rng, spec.rho_init)
        else:
            dense1 = Dense(spec.flat_features, spec.hidden, rng)
            dense2 = Dense(spec.hidden, spec.num_classes, rng)

        trunk = [
            ("conv1", conv1),
            ("pool1", MaxPool2d(spec.pool_window)),
            ("relu1", ReLU()),
            ("conv2", conv2),
            ("pool2", MaxPool2d(spec.pool_window)),
            ("relu2", ReLU()),
            ("flatten", Flatten()),
        ]
        head = [("dense1", dense1), ("relu3", ReLU()), ("dense2", dense2)]
        model = Network(spec, trunk, head)
        logger.debug(
            f"Built {spec.variant}: {model.parameter_count()} trainable parameters "
            f"({model.dense_parameter_count()} dense)"
        )
        return model

    def save_parameters(self, model: Network, path: Path) -> Path:
        """
        Write every trainable array to an .npz file.

        Args:
            model: Network to save
            path: Destination; '.npz' is appended by numpy when missing

        Returns:
            The path written
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {name: p.data for name, p in model.named_parameters().items()}
        temp_file = path.with_suffix(".tmp.npz")
        np.savez(temp_file, variant=np.array(model.spec.variant), **arrays)
        final = path if path.suffix == ".npz" else path.with_suffix(".npz")
        temp_file.replace(final)
        logger.info(f"Saved {len(arrays)} parameter arrays to {final}")
        return final

    def load_parameters(self, model: Network, path: Path) -> None:
        """
        Overwrite the model's trainable arrays from an .npz file.

        Raises:
            FileNotFoundError: If the file does not exist
            ValidationError: If it was saved from a different variant
            DimensionError: If an array shape disagrees
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Parameter file not found: {path}")
        with np.load(path) as saved:
            variant = str(saved["variant"])
            if variant != model.spec.variant:
                raise ValidationError(
                    f"{path} holds {variant} parameters, model is {model.spec.variant}"
                )
            for name, param in model.named_parameters().items():
                if name not in saved:
                    raise ValidationError(f"{path} lacks parameter {name}")
                array = saved[name]
                if array.shape != param.shape:
                    raise DimensionError(f"parameter {name} shape differs",
                                         array.shape, param.shape)
                param.data[...] = array
        model.after_step()
        logger.info(f"Loaded parameters for {variant} from {path}")
