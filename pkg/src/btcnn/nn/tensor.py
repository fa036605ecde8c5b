"""
Reverse-mode automatic differentiation over numpy arrays.

Every operation that touches a tensor requiring gradients attaches a `Node` to its
output. `backward()` collects the nodes reachable from a scalar loss into a
`ComputationRecord` in topological order, replays their backward rules in reverse and
then marks the record consumed so it cannot be replayed.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import DimensionError, StateError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_enabled = True


def is_grad_enabled() -> bool:
    """Return whether new operations are recorded for differentiation."""
    return _grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@dataclass(eq=False)
class Node:
    """
    One recorded operation.

    Attributes:
        op: Operation name, for debugging
        inputs: Tensors the operation read
        output: Tensor the operation produced
        backward_fn: Maps the output gradient to one gradient per input (None to skip)
        consumed: Set once the record holding this node has been replayed
    """

    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward_fn: Optional[BackwardFn]
    consumed: bool = False


class Tensor:
    """
    An n-dimensional float64 array participating in the differentiation graph.

    Attributes:
        data: The values, always float64
        requires_grad: Whether gradients are tracked for this tensor
        grad: Gradient of the last loss with respect to `data`, same shape
        name: Optional label used in log messages
    """

    __array_priority__ = 1000

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None
    ) -> None:
        """
        Wrap an array.

        Args:
            data: Values; converted to float64
            requires_grad: Track gradients for this tensor
            name: Optional label
        """
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        """Dimension sizes."""
        return self.data.shape

    @property
    def size(self) -> int:
        """Number of stored values (product of the shape)."""
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        """True when the tensor was not produced by a recorded operation."""
        return self._node is None

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.size != 1:
            raise DimensionError("item() needs a one-element tensor", self.shape)
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return the underlying array (not a copy)."""
        return self.data

    def detach(self) -> "Tensor":
        """Return a new leaf tensor sharing no graph history."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        """Reset the gradient to zeros."""
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Backpropagate from this scalar tensor; see `backward`."""
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic delegates to the functional ops

    def __add__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.add(self, other)

    def __radd__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.add(other, self)

    def __sub__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.mul(self, other)

    def __rmul__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.mul(other, self)

    def __truediv__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other: "Operand") -> "Tensor":
        from . import functional as F
        return F.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import functional as F
        return F.neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        from . import functional as F
        return F.power(self, exponent)


Operand = Union[Tensor, float, int]


def as_tensor(value: Operand) -> Tensor:
    """Wrap plain numbers as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def record(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    op: str,
    backward_fn: BackwardFn
) -> Tensor:
    """
    Create the output tensor of an operation and attach its node when needed.

    Args:
        data: Forward result
        inputs: Tensors the operation read
        op: Operation name
        backward_fn: Gradient rule, one entry per input

    Returns:
        The output tensor
    """
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), out, backward_fn)
    return out


class ComputationRecord:
    """Operation nodes reachable from one output, in topological order."""

    def __init__(self, nodes: List[Node]) -> None:
        """
        Hold an already ordered node list.

        Args:
            nodes: Nodes such that every node's inputs are produced earlier
        """
        self.nodes = nodes
        self.consumed = False

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationRecord":
        """
        Collect the graph behind `output` with an iterative post-order walk.

        Args:
            output: Tensor whose history is collected

        Returns:
            The record in topological order

        Raises:
            StateError: If any reachable node was already replayed
        """
        ordered: List[Node] = []
        visited = set()
        if output._node is None:
            return cls(ordered)

        stack: List[Tuple[Node, bool]] = [(output._node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                ordered.append(node)
                continue
            if id(node) in visited:
                continue
            if node.consumed:
                raise StateError(f"graph node '{node.op}' was already consumed by backward()")
            visited.add(id(node))
            stack.append((node, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in visited:
                    stack.append((inp._node, False))
        return cls(ordered)

    def consume(self) -> None:
        """Mark every node replayed and release the backward closures."""
        for node in self.nodes:
            node.consumed = True
            node.backward_fn = None
        self.consumed = True

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """
    Populate `grad` on every tensor reachable from `loss` that requires gradients.

    Leaf gradients accumulate across calls until zeroed; intermediate gradients are
    overwritten. The record is consumed afterwards.

    Args:
        loss: Scalar tensor produced by a recorded forward pass

    Raises:
        DimensionError: If `loss` is not a scalar
        StateError: If the record behind `loss` was already consumed
    """
    if loss.size != 1:
        raise DimensionError("backward() needs a scalar loss", loss.shape)
    if loss._node is not None and loss._node.consumed:
        raise StateError("backward() called twice on the same computation record")

    seed = np.ones_like(loss.data)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    rec = ComputationRecord.from_output(loss)
    logger.debug(f"Backward over {len(rec)} recorded operations")

    pending = {id(loss): seed}
    for node in reversed(rec.nodes):
        grad_out = pending.pop(id(node.output), None)
        if grad_out is None:
            continue
        node.output.grad = grad_out
        input_grads = node.backward_fn(grad_out)
        for inp, grad_in in zip(node.inputs, input_grads):
            if grad_in is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = grad_in.copy() if inp.grad is None else inp.grad + grad_in
            elif id(inp) in pending:
                pending[id(inp)] = pending[id(inp)] + grad_in
            else:
                pending[id(inp)] = grad_in

    rec.consume()
