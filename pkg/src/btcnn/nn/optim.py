"""Adam and SGD updates over a list of parameter tensors."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from ..utils.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, LEARNING_RATE
from ..utils.errors import DimensionError, StateError, ValidationError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """
    Gradient-descent settings plus the per-parameter moment buffers.

    Attributes:
        learning_rate: Step size, positive
        adaptive: Use first/second-moment (Adam) updates; plain SGD otherwise
        beta1: First-moment decay
        beta2: Second-moment decay
        epsilon: Denominator guard
        step: Number of completed adaptive steps
        first_moments: Per-parameter first moments, keyed by position in the parameter list
        second_moments: Per-parameter second moments, same keys
    """

    learning_rate: float = LEARNING_RATE
    adaptive: bool = True
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step: int = 0
    first_moments: Dict[int, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate the hyperparameters."""
        if self.learning_rate <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError(f"moment decays must lie in [0, 1): {self.beta1}, {self.beta2}")


def optimizer_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """
    Update parameters in place from their gradients, then zero the gradients.

    Args:
        params: Trainable tensors, in a fixed order across calls
        state: Settings and moment buffers, updated in place

    Raises:
        StateError: If a parameter has no gradient
    """
    for index, param in enumerate(params):
        if param.grad is None:
            label = param.name or f"#{index}"
            raise StateError(f"parameter {label} has no gradient; run backward() first")

    if state.adaptive:
        state.step += 1
        bias1 = 1.0 - state.beta1 ** state.step
        bias2 = 1.0 - state.beta2 ** state.step

    for index, param in enumerate(params):
        grad = param.grad
        if not state.adaptive:
            param.data -= state.learning_rate * grad
        else:
            m = state.first_moments.get(index)
            v = state.second_moments.get(index)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)
            elif m.shape != param.shape:
                raise DimensionError("moment buffer does not match parameter", m.shape, param.shape)
            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.first_moments[index] = m
            state.second_moments[index] = v
            param.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        param.grad = np.zeros_like(param.data)


class Optimizer:
    """Binds a parameter list to an `OptimizerState`."""

    def __init__(self, params: List[Tensor], state: OptimizerState) -> None:
        """
        Initialize the optimizer.

        Args:
            params: Trainable tensors
            state: Optimizer settings and buffers
        """
        self.params = params
        self.state = state
        mode = "adaptive" if state.adaptive else "sgd"
        logger.debug(f"Optimizer over {len(params)} tensors ({mode}, lr={state.learning_rate})")

    def zero_grad(self) -> None:
        """Reset every parameter gradient to zeros."""
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        """Apply one update; see `optimizer_step`."""
        optimizer_step(self.params, self.state)
