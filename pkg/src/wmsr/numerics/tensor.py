"""Dense tensor wrapper and the define-by-run tape used for reverse mode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it.

    Parameters
    ----------
    data : array_like
        Values. Float arrays keep their dtype, anything else becomes float64.
    requires_grad : bool
        Leaf tensors with this flag receive gradients from :func:`backward`.
    name : str, optional
        Used by modules for parameter naming and in error messages.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Arithmetic is routed through ops so it is recorded on the tape.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


@dataclass
class Node:
    """One executed operation: its output, its inputs and the VJP closure."""

    id: int
    name: str
    out: Tensor
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of operations executed while the tape is active.

    Use as a context manager; every op whose inputs need gradients appends a
    :class:`Node`. :func:`backward` replays the nodes in reverse order.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must be closed in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, name, out, inputs, vjp) -> Node:
        node = Node(len(self.nodes), name, out, tuple(inputs), vjp)
        self.nodes.append(node)
        return node


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(name: str, out_data: np.ndarray, inputs: Iterable, vjp) -> Tensor:
    """Wrap ``out_data`` and, if any input needs a gradient, record the op."""
    inputs = tuple(inputs)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Tensor, params: Optional[Sequence[Tensor]] = None):
    """Reverse-mode sweep over ``tape`` seeded with d(loss)/d(loss) = 1.

    Sets ``.grad`` on every leaf that requires a gradient. When ``params`` is
    given, returns their gradients in order, with exact zeros for parameters
    the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(
                    f"{node.name}: gradient shape {gi.shape} != input shape {t.shape}"
                )
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
            seen[key] = t
    # Whatever is left un-popped belongs to a leaf.
    for key, g in grads.items():
        t = seen[key]
        t.grad = g.astype(t.data.dtype, copy=False)
    if params is None:
        return None
    return [
        grads[id(p)].astype(p.data.dtype, copy=False) if id(p) in grads else np.zeros_like(p.data)
        for p in params
    ]
