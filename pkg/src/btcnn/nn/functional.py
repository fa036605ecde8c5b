"""
Differentiable operations on `Tensor`.

Elementwise operations accept operands of identical shape, or one scalar operand.
There is no general broadcasting; the layer ops below own their bias and mask
broadcasts explicitly.
"""
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from ..utils.errors import DimensionError, ValidationError
from .tensor import Operand, Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce an elementwise gradient back to a scalar operand's shape."""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op} needs equal shapes or a scalar operand", a.shape, b.shape)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise sum."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), "add", backward_fn)


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise difference."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), "sub", backward_fn)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), "mul", backward_fn)


def div(a: Operand, b: Operand) -> Tensor:
    """Elementwise quotient."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)
    out = a.data / b.data

    def backward_fn(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return record(out, (a, b), "div", backward_fn)


def neg(a: Tensor) -> Tensor:
    """Elementwise negation."""
    return record(-a.data, (a,), "neg", lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Raise every entry to a constant power."""
    if exponent == 2:
        return square(a)

    def backward_fn(g: np.ndarray):
        return (g * exponent * np.power(a.data, exponent - 1),)

    return record(np.power(a.data, exponent), (a,), f"pow{exponent}", backward_fn)


def square(a: Tensor) -> Tensor:
    """Elementwise square."""
    return record(a.data * a.data, (a,), "square", lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(a.data)
    return record(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Elementwise natural logarithm."""
    return record(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    """Elementwise ln(1 + e^x), computed without overflow."""
    return record(np.logaddexp(0.0, a.data), (a,), "softplus", lambda g: (g * expit(a.data),))


def mul_const(a: Tensor, const: np.ndarray) -> Tensor:
    """
    Multiply by a constant array broadcast onto `a` (masks, fixed scales).

    Args:
        a: Tensor to scale
        const: Array broadcastable to `a.shape`; receives no gradient

    Returns:
        The product, same shape as `a`
    """
    const = np.asarray(const, dtype=np.float64)
    try:
        out = a.data * const
    except ValueError as e:
        raise DimensionError("mul_const operand does not broadcast", a.shape, const.shape) from e
    if out.shape != a.shape:
        raise DimensionError("mul_const must preserve the tensor shape", a.shape, const.shape)
    return record(out, (a,), "mul_const", lambda g: (g * const,))


def sum(a: Tensor) -> Tensor:  # noqa: A001
    """Sum of every entry, as a scalar tensor."""
    return record(np.asarray(a.data.sum()), (a,), "sum", lambda g: (np.full(a.shape, g),))


def mean(a: Tensor) -> Tensor:
    """Mean of every entry, as a scalar tensor."""
    n = a.size
    return record(
        np.asarray(a.data.mean()),
        (a,),
        "mean",
        lambda g: (np.full(a.shape, g / n),),
    )


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Return a tensor with the same values and a new shape."""
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError("cannot reshape", a.shape, shape) from e
    return record(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Collapse every dimension after the batch dimension."""
    return reshape(a, (a.shape[0], -1))


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map out[b, j] = sum_i input[b, i] * weights[i, j] + bias[j].

    Args:
        input: [B, n_in]
        weights: [n_in, n_out]
        bias: [n_out]

    Returns:
        [B, n_out]

    Raises:
        DimensionError: If the shapes do not conform
    """
    if (
        input.ndim != 2
        or weights.ndim != 2
        or bias.ndim != 1
        or input.shape[1] != weights.shape[0]
        or weights.shape[1] != bias.shape[0]
    ):
        raise DimensionError("dense shapes do not conform", input.shape, weights.shape, bias.shape)

    x, w = input.data, weights.data

    def backward_fn(g: np.ndarray):
        return g @ w.T, x.T @ g, g.sum(axis=0)

    return record(x @ w + bias.data, (input, weights, bias), "dense", backward_fn)


def _im2col(padded: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather patches into cols[c, i, j, b, h, w] = padded[b, c, i + h*s, j + w*s]."""
    batch, channels = padded.shape[:2]
    cols = np.empty((channels, k, k, batch, out_h, out_w), dtype=padded.dtype)
    for i in range(k):
        i_end = i + stride * out_h
        for j in range(k):
            j_end = j + stride * out_w
            patch = padded[:, :, i:i_end:stride, j:j_end:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols


def _col2im(
    cols: np.ndarray,
    padded_shape: Tuple[int, ...],
    k: int,
    stride: int,
    out_h: int,
    out_w: int
) -> np.ndarray:
    """Scatter-add patch gradients back onto the padded input."""
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        i_end = i + stride * out_h
        for j in range(k):
            j_end = j + stride * out_w
            padded[:, :, i:i_end:stride, j:j_end:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    return padded


def conv2d(
    input: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    padding: int = 0,
    stride: int = 1
) -> Tensor:
    """
    2-D cross-correlation (no kernel flip) with zero padding.

    Args:
        input: [B, C_in, H, W]
        kernels: [C_out, C_in, k, k], k odd
        bias: [C_out], or None for no bias
        padding: Zero padding on every side
        stride: Step between output positions

    Returns:
        [B, C_out, H', W'] with H' = floor((H + 2p - k) / stride) + 1

    Raises:
        DimensionError: If shapes disagree or the kernel exceeds the padded input
        ValidationError: If the kernel is even-sized, or padding/stride are invalid
    """
    if input.ndim != 4 or kernels.ndim != 4 or input.shape[1] != kernels.shape[1]:
        raise DimensionError("conv2d input/kernel channels disagree", input.shape, kernels.shape)
    c_out, c_in, k, k2 = kernels.shape
    if k != k2 or k % 2 == 0:
        raise ValidationError(f"conv2d needs square odd kernels, got {k}x{k2}")
    if padding < 0 or stride < 1:
        raise ValidationError(f"invalid padding={padding} or stride={stride}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError("conv2d bias does not match output channels", bias.shape, (c_out,))

    batch, _, height, width = input.shape
    if height + 2 * padding < k or width + 2 * padding < k:
        raise DimensionError(
            "conv2d kernel larger than padded input",
            (height + 2 * padding, width + 2 * padding),
            (k, k),
        )
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1

    padded = np.pad(input.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(padded, k, stride, out_h, out_w).reshape(c_in * k * k, -1)
    w_mat = kernels.data.reshape(c_out, -1)
    out = (w_mat @ cols).reshape(c_out, batch, out_h, out_w).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)

    inputs = (input, kernels) if bias is None else (input, kernels, bias)

    def backward_fn(g: np.ndarray):
        g_mat = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
        grad_input = None
        if input.requires_grad:
            grad_cols = (w_mat.T @ g_mat).reshape(c_in, k, k, batch, out_h, out_w)
            grad_padded = _col2im(grad_cols, padded.shape, k, stride, out_h, out_w)
            grad_input = grad_padded[:, :, padding:padding + height, padding:padding + width]
        grad_kernels = (g_mat @ cols.T).reshape(kernels.shape) if kernels.requires_grad else None
        if bias is None:
            return grad_input, grad_kernels
        return grad_input, grad_kernels, g.sum(axis=(0, 2, 3))

    return record(out, inputs, "conv2d", backward_fn)


def maxpool2d(input: Tensor, window: int) -> Tensor:
    """
    Non-overlapping max pooling.

    The backward pass routes each gradient to the first maximal cell of its window
    in row-major order.

    Args:
        input: [B, C, H, W] with H and W divisible by `window`
        window: Pool size and stride

    Returns:
        [B, C, H / window, W / window]

    Raises:
        DimensionError: If the spatial size is not divisible by the window
    """
    if input.ndim != 4:
        raise DimensionError("maxpool2d needs a 4-D input", input.shape)
    if window < 1:
        raise ValidationError(f"pool window must be positive, got {window}")
    batch, channels, height, width = input.shape
    if height % window or width % window:
        raise DimensionError(
            f"maxpool2d window {window} does not divide the spatial size",
            input.shape,
        )
    out_h, out_w = height // window, width // window

    blocks = (
        input.data.reshape(batch, channels, out_h, window, out_w, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, window * window)
    )
    argmax = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, argmax, axis=-1)[..., 0]

    def backward_fn(g: np.ndarray):
        grad_blocks = np.zeros_like(blocks)
        np.put_along_axis(grad_blocks, argmax, g[..., None], axis=-1)
        grad = (
            grad_blocks.reshape(batch, channels, out_h, out_w, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(input.shape)
        )
        return (grad,)

    return record(out, (input,), "maxpool2d", backward_fn)


def relu(input: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = input.data > 0
    return record(np.where(mask, input.data, 0.0), (input,), "relu", lambda g: (g * mask,))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of [B, C] logits with max-subtraction."""
    if logits.ndim != 2:
        raise DimensionError("softmax needs [B, C] logits", logits.shape)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g: np.ndarray):
        return (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)

    return record(probs, (logits,), "softmax", backward_fn)


def _check_labels(labels: np.ndarray, batch: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise DimensionError("labels must have one entry per row", labels.shape, (batch,))
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got dtype {labels.dtype}")
    if batch and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Batch-mean negative log-likelihood of integer labels under softmax(logits).

    Args:
        logits: [B, C]
        labels: [B] integers in [0, C)

    Returns:
        Scalar loss, always >= 0

    Raises:
        ValidationError: If a label is out of range
    """
    if logits.ndim != 2:
        raise DimensionError("cross_entropy needs [B, C] logits", logits.shape)
    batch, num_classes = logits.shape
    if batch == 0:
        raise ValidationError("cross_entropy needs a non-empty batch")
    labels = _check_labels(labels, batch, num_classes)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def backward_fn(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return record(np.asarray(loss), (logits,), "cross_entropy", backward_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tuple[Tensor, Tensor]:
    """
    Compute the cross-entropy loss together with the softmax probabilities.

    Args:
        logits: [B, C]
        labels: [B] integers in [0, C)

    Returns:
        Tuple of (scalar loss, [B, C] probabilities); both are differentiable
    """
    return cross_entropy(logits, labels), softmax(logits)


def pairwise_sq_dists(rows: Tensor) -> Tensor:
    """
    Squared Euclidean distances between every pair of rows.

    Args:
        rows: [B, C]

    Returns:
        [B, B] with out[i, j] = ||rows[i] - rows[j]||^2
    """
    if rows.ndim != 2:
        raise DimensionError("pairwise_sq_dists needs a 2-D input", rows.shape)
    p = rows.data
    diff = p[:, None, :] - p[None, :, :]
    out = (diff * diff).sum(axis=-1)

    def backward_fn(g: np.ndarray):
        sym = g + g.T
        return (2.0 * (sym.sum(axis=1, keepdims=True) * p - sym @ p),)

    return record(out, (rows,), "pairwise_sq_dists", backward_fn)
