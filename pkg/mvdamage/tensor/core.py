import contextlib
import contextvars
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

# per thread and per asyncio task; new threads start at float32
_DTYPE: contextvars.ContextVar = contextvars.ContextVar("mvdamage_tensor_dtype", default=np.dtype(np.float32))


class ShapeError(ValueError):
    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = "{} (shapes: {})".format(
                message, ", ".join(str(tuple(s)) for s in shapes)
            )
        super().__init__(message)
        self.shapes = shapes


def default_dtype() -> np.dtype:
    return _DTYPE.get()


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Switch the dtype of newly created tensors, e.g. float64 for gradient
    checks. The setting is local to the current thread or task."""
    token = _DTYPE.set(np.dtype(dtype))
    try:
        yield _DTYPE.get()
    finally:
        _DTYPE.reset(token)


def as_array(value, dtype=None) -> np.ndarray:
    array = np.asarray(value)
    if dtype is not None:
        return array.astype(dtype, copy=False)
    if array.dtype.kind != "f":
        return array.astype(_DTYPE.get())
    return array


class Tensor:
    data: np.ndarray
    requires_grad: bool
    grad: Optional[np.ndarray]

    def __init__(self, data, requires_grad: bool = False, _ctx: "Function" = None):
        self.data = as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # Operators delegate to ops so that every expression lands on the record
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.neg(other))

    def __rsub__(self, other):
        from . import ops

        return ops.add(ops.neg(self), other)

    def __pow__(self, exponent: float):
        from . import ops

        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name and a frozen flag"""

    name: str
    frozen: bool

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.frozen = frozen
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)


class Function:
    """One recorded operation. Subclasses implement forward on arrays and
    backward returning one gradient (or None) per parent."""

    parents: Tuple[Tensor, ...]

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        ctx = cls(*inputs)
        output = ctx.forward(*[t.data for t in inputs], **kwargs)
        requires_grad = any(t.requires_grad for t in inputs)
        return Tensor(output, requires_grad=requires_grad, _ctx=ctx if requires_grad else None)

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @property
    def name(self) -> str:
        return self.__class__.__name__


class ComputationRecord:
    """Operations that produced a tensor, in topological order (inputs first)"""

    nodes: List[Tensor]

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = []
        visited = set()
        # iterative post-order DFS
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in reversed(node._ctx.parents):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

    @property
    def operations(self) -> List[Function]:
        return [node._ctx for node in self.nodes if node._ctx is not None]

    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node._ctx is None]

    def __len__(self):
        return len(self.operations)


def backward(output: Tensor, record: Optional[ComputationRecord] = None):
    """Accumulate d(output)/d(leaf) into the .grad of every leaf on the record"""
    if output.size != 1:
        raise ShapeError("backward needs a scalar output", output.shape)
    if not output.requires_grad:
        return
    if record is None:
        record = ComputationRecord(output)

    pending: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(record.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue

        if node._ctx is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue

        parent_grads = node._ctx.backward(grad)
        for parent, parent_grad in zip(node._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
