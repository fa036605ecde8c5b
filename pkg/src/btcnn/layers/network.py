"""A sequential network split into a deterministic trunk and a (possibly stochastic) head."""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.model_spec import ModelSpec
from ..nn.layers import Module
from ..nn.tensor import Tensor
from ..utils.errors import ValidationError
from .bayes import BayesianDense


class Network:
    """
    Named layers run in order.

    The trunk (convolutions, pooling, flatten) never samples, so its output can be
    shared by every posterior draw of the head.
    """

    def __init__(
        self,
        spec: ModelSpec,
        trunk: Sequence[Tuple[str, Module]],
        head: Sequence[Tuple[str, Module]]
    ) -> None:
        """
        Initialize the network.

        Args:
            spec: Architecture this network implements
            trunk: Deterministic layers
            head: Layers after the trunk, ending in logits
        """
        self.spec = spec
        self.trunk = list(trunk)
        self.head_layers = list(head)
        for name, layer in self.trunk:
            if layer.stochastic:
                raise ValidationError(f"trunk layer {name} must be deterministic")

    @property
    def layers(self) -> List[Tuple[str, Module]]:
        return self.trunk + self.head_layers

    @property
    def is_bayesian(self) -> bool:
        return any(layer.stochastic for _, layer in self.head_layers)

    def bayesian_layers(self) -> List[BayesianDense]:
        return [layer for _, layer in self.layers if isinstance(layer, BayesianDense)]

    def features(self, x: Tensor) -> Tensor:
        """Run the trunk."""
        for _, layer in self.trunk:
            x = layer(x)
        return x

    def head(self, features: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Run the head once (one posterior draw for Bayesian layers) and return logits."""
        x = features
        for _, layer in self.head_layers:
            x = layer(x, rng)
        return x

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Return logits for a batch [B, 1, H, W]."""
        return self.head(self.features(x), rng)

    __call__ = forward

    def parameters(self) -> List[Tensor]:
        return [p for _, layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> Dict[str, Tensor]:
        """Return parameters keyed as '<layer>.<index>'."""
        named = {}
        for name, layer in self.layers:
            for i, p in enumerate(layer.parameters()):
                named[f"{name}.{i}"] = p
        return named

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for _, layer in self.layers)

    def layer_parameter_counts(self) -> Dict[str, int]:
        return {name: layer.parameter_count() for name, layer in self.layers}

    def dense_parameter_count(self) -> int:
        """Trainable scalars in the dense layers."""
        counts = self.layer_parameter_counts()
        return counts["dense1"] + counts["dense2"]

    def after_step(self) -> None:
        for _, layer in self.layers:
            layer.after_step()
