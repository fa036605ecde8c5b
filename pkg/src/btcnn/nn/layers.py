"""Deterministic layers and the module protocol shared by every layer kind."""
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor


def fan_in_uniform(
    shape: Tuple[int, ...],
    fan_in: int,
    rng: np.random.Generator
) -> np.ndarray:
    """Draw from U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class for layers.

    `stochastic` marks layers whose output depends on the random stream passed to
    `forward`; everything else must ignore `rng`.
    """

    stochastic = False

    def parameters(self) -> List[Tensor]:
        """Return the trainable tensors, in a stable order."""
        return []

    def parameter_count(self) -> int:
        """Return the number of trainable scalars."""
        return int(sum(p.size for p in self.parameters()))

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Apply the layer."""
        raise NotImplementedError

    def after_step(self) -> None:
        """Restore layer constraints after an optimizer update."""

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self.forward(x, rng)


class Conv2d(Module):
    """Trainable 3x3-style convolution with bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        padding: int,
        rng: np.random.Generator
    ) -> None:
        """
        Initialize the layer.

        Args:
            in_channels: Input channel count
            out_channels: Number of filters
            kernel_size: Odd kernel side
            padding: Zero padding on each side
            rng: Initialization stream
        """
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Tensor(fan_in_uniform(shape, fan_in, rng), requires_grad=True, name="conv.w")
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, name="conv.b")
        self.padding = padding

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, padding=self.padding)


class Dense(Module):
    """Fully connected layer with weights stored as [n_in, n_out]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        """
        Initialize the layer.

        Args:
            n_in: Input width
            n_out: Output width
            rng: Initialization stream
        """
        self.weight = Tensor(fan_in_uniform((n_in, n_out), n_in, rng), requires_grad=True,
                             name="dense.w")
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, name="dense.b")

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.dense(x, self.weight, self.bias)


class MaxPool2d(Module):
    """Non-overlapping max-pooling with a square window."""

    def __init__(self, window: int) -> None:
        self.window = window

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.maxpool2d(x, self.window)


class ReLU(Module):
    """Elementwise max(x, 0)."""

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.relu(x)


class Flatten(Module):
    """Collapse [B, C, H, W] to [B, C * H * W]."""

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.flatten(x)
