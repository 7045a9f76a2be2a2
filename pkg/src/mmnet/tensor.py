"""Dense tensor type and the tape that records differentiable ops.

A ``Tensor`` is a thin wrapper over a numpy array.  Ops defined in
:mod:`mmnet.ops` compute their result eagerly and, when a :class:`Tape` is
active and any input requires a gradient, append a node holding the
vector-Jacobian product closure.  ``Tape.backward`` replays those nodes in
exact reverse order.
"""
from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_RANK = 5

_default_dtype = np.dtype(np.float32)
_debug = False
_tape_stack: list["Tape"] = []


class NonFiniteError(ArithmeticError):
    """Raised in debug mode when an op produces NaN or Inf."""


class Axis(enum.IntEnum):
    BATCH = 0
    CHANNEL = 1
    DEPTH = 2
    HEIGHT = 3
    WIDTH = 4


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_debug(flag: bool) -> None:
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def debug_mode(flag: bool = True):
    prev = _debug
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            dtype = dtype or data.dtype
            data = data.data
        if dtype is None:
            dtype = _default_dtype
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        if 0 in arr.shape:
            raise ValueError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the real work lives in mmnet.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(_wrap(other, self.dtype), -1.0))

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from . import ops
        return ops.sum_all(self)


def _wrap(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of executed ops; use as a context manager."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        self.nodes.append(Node(inputs, output, vjp, op))

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray]:
        """Propagate d(loss)/d(.) through the recorded ops.

        Every tensor in ``params`` gets its ``.grad`` set (zeros if the loss
        does not depend on it) and the list of gradients is returned in the
        same order.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # leaves left in `grads` are parameters / inputs
        out = []
        for p in params or ():
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            p.grad = g.astype(p.dtype, copy=False)
            out.append(p.grad)
        return out


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_tape():
    saved = list(_tape_stack)
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack.extend(saved)


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray]:
    return tape.backward(loss, params)


def make_result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an op result and record it on the active tape if needed."""
    if _debug and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, vjp)
    return out
