"""
Topological convolution components.

Circle filters are fixed kernels sampled from the linear embedding of the primary
circle, w_x(t, u) = cos(x) t + sin(x) u. The circle-one layer identifies input and
output channels with points on the circle and prunes every connection whose angular
distance exceeds a threshold.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..nn import functional as F
from ..nn.layers import Module, fan_in_uniform
from ..nn.tensor import Tensor
from ..utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
_BOUNDARY_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class CircleFilterBank:
    """
    A fixed bank of circle filters.

    Attributes:
        num_filters: K, number of filters
        kernel_size: k, odd side length
        angles: [K] angles x_j = 2*pi*j/K
        weights: [K, 1, k, k] non-trainable kernels with read-only storage
    """

    num_filters: int
    kernel_size: int
    angles: np.ndarray
    weights: Tensor


def make_circle_filters(num_filters: int, kernel_size: int) -> CircleFilterBank:
    """
    Build K unit-norm circle filters on a k x k grid over [-1, 1]^2.

    `t` runs along columns and `u` along rows, so the x = 0 filter is a pure
    horizontal gradient.

    Args:
        num_filters: K >= 1
        kernel_size: Odd k >= 3

    Returns:
        The bank

    Raises:
        ValidationError: If K < 1 or k is even or smaller than 3
    """
    if num_filters < 1:
        raise ValidationError(f"circle filter bank needs K >= 1, got {num_filters}")
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValidationError(f"circle filters need an odd kernel size >= 3, got {kernel_size}")

    angles = TWO_PI * np.arange(num_filters) / num_filters
    grid = np.linspace(-1.0, 1.0, kernel_size)
    u, t = np.meshgrid(grid, grid, indexing="ij")

    kernels = np.cos(angles)[:, None, None] * t + np.sin(angles)[:, None, None] * u
    norms = np.sqrt((kernels * kernels).sum(axis=(1, 2), keepdims=True))
    kernels = kernels / norms

    weights = Tensor(kernels[:, None, :, :], requires_grad=False, name="circle_filters")
    weights.data.flags.writeable = False
    angles.flags.writeable = False
    logger.debug(f"Built {num_filters} circle filters of size {kernel_size}")
    return CircleFilterBank(num_filters, kernel_size, angles, weights)


def circle_filter_forward(
    bank: CircleFilterBank,
    input: Tensor,
    padding: Optional[int] = None
) -> Tensor:
    """
    Correlate a greyscale batch with the fixed bank.

    Args:
        bank: Circle filters
        input: [B, 1, H, W]
        padding: Zero padding; defaults to k // 2 (same-size output)

    Returns:
        [B, K, H', W']

    Raises:
        ValidationError: If the input has more than one channel
    """
    if input.ndim != 4 or input.shape[1] != 1:
        raise ValidationError(f"circle filters take a single-channel input, got {input.shape}")
    if padding is None:
        padding = bank.kernel_size // 2
    return F.conv2d(input, bank.weights, None, padding=padding)


def circle_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic distance on the unit circle, min(|a - b|, 2*pi - |a - b|)."""
    diff = np.abs(np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(diff, TWO_PI - diff)


@dataclass(frozen=True, eq=False)
class CircleOneMask:
    """
    Connectivity of a circle-one layer.

    Attributes:
        out_points: [C_out] angles of the output filters
        in_points: [C_in] angles of the input channels
        threshold: tau, in radians
        mask: [C_out, C_in] boolean, True where d(p_j, q_i) <= tau
    """

    out_points: np.ndarray
    in_points: np.ndarray
    threshold: float
    mask: np.ndarray

    @property
    def shape(self):
        return self.mask.shape


def make_col_mask(
    out_channels: int,
    in_channels: int,
    threshold: float,
    in_points: Optional[np.ndarray] = None
) -> CircleOneMask:
    """
    Assign evenly spaced angles to channels and keep connections within `threshold`.

    Args:
        out_channels: C_out
        in_channels: C_in
        threshold: tau > 0; the boundary distance tau is kept
        in_points: Angles of the input channels; evenly spaced when omitted

    Returns:
        The mask

    Raises:
        ValidationError: If tau <= 0 or the channel counts are not positive
    """
    if threshold <= 0:
        raise ValidationError(f"circle-one threshold must be positive, got {threshold}")
    if out_channels < 1 or in_channels < 1:
        raise ValidationError(f"channel counts must be positive: {out_channels}, {in_channels}")

    out_points = TWO_PI * np.arange(out_channels) / out_channels
    if in_points is None:
        in_points = TWO_PI * np.arange(in_channels) / in_channels
    in_points = np.asarray(in_points, dtype=np.float64)
    if in_points.shape != (in_channels,):
        raise DimensionError("in_points must have one angle per input channel",
                             in_points.shape, (in_channels,))

    dist = circle_distance(out_points[:, None], in_points[None, :])
    mask = (dist <= threshold) | np.isclose(dist, threshold, rtol=0.0, atol=_BOUNDARY_ATOL)
    mask.flags.writeable = False
    logger.debug(
        f"Circle-one mask {out_channels}x{in_channels}, tau={threshold:.4f}: "
        f"{int(mask.sum())} of {mask.size} connections kept"
    )
    return CircleOneMask(out_points, in_points, float(threshold), mask)


def col_forward(
    mask: CircleOneMask,
    weights: Tensor,
    input: Tensor,
    bias: Optional[Tensor] = None,
    padding: int = 0
) -> Tensor:
    """
    Convolve with the masked kernels weights * mask (mask broadcast over k x k).

    Args:
        mask: Connectivity
        weights: [C_out, C_in, k, k]
        input: [B, C_in, H, W]
        bias: [C_out] or None
        padding: Zero padding

    Returns:
        [B, C_out, H', W']; masked entries receive zero gradient

    Raises:
        DimensionError: If the mask does not match the kernel tensor
    """
    if weights.ndim != 4 or weights.shape[:2] != mask.shape:
        raise DimensionError("circle-one mask does not match weights", mask.shape, weights.shape)
    effective = F.mul_const(weights, mask.mask[:, :, None, None])
    return F.conv2d(input, effective, bias, padding=padding)


class CircleFilterLayer(Module):
    """First layer of a topological network: the fixed circle-filter bank."""

    def __init__(self, num_filters: int, kernel_size: int) -> None:
        """
        Initialize the layer.

        Args:
            num_filters: K
            kernel_size: k
        """
        self.bank = make_circle_filters(num_filters, kernel_size)

    @property
    def angles(self) -> np.ndarray:
        return self.bank.angles

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return circle_filter_forward(self.bank, x)


class CircleOneLayer(Module):
    """Convolution whose filter-to-filter connections are pruned on the circle."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        threshold: float,
        rng: np.random.Generator,
        in_points: Optional[np.ndarray] = None
    ) -> None:
        """
        Initialize the layer; pruned kernel entries start (and stay) at exactly 0.

        Args:
            in_channels: C_in
            out_channels: C_out
            kernel_size: Odd k
            threshold: tau in radians
            rng: Initialization stream
            in_points: Angles of the incoming channels (the circle-filter angles when
                the previous layer is a circle-filter bank)
        """
        self.mask = make_col_mask(out_channels, in_channels, threshold, in_points)
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2
        self._mask4 = self.mask.mask[:, :, None, None]

        kept = max(1, int(self.mask.mask.sum(axis=1).max()))
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        init = fan_in_uniform(shape, kept * kernel_size * kernel_size, rng)
        self.weight = Tensor(np.where(self._mask4, init, 0.0), requires_grad=True, name="col.w")
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, name="col.b")

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def parameter_count(self) -> int:
        """Count only the unpruned kernel entries plus the biases."""
        k2 = self.kernel_size * self.kernel_size
        return int(self.mask.mask.sum()) * k2 + self.bias.size

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return col_forward(self.mask, self.weight, x, self.bias, padding=self.padding)

    def after_step(self) -> None:
        np.copyto(self.weight.data, 0.0, where=~np.broadcast_to(self._mask4, self.weight.shape))
