"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors record themselves
on the active :class:`Tape` (if any input requires a gradient); calling
:func:`backward` replays the recorded adjoints in reverse order and deposits
gradients on every leaf that requires one.

>>> x = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = (x * x).sum()
>>> backward(loss, tape)
>>> x.grad
array([2., 4.], dtype=float32)
"""
from __future__ import annotations

import contextlib
import struct
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "NonFiniteError",
    "backward",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "abs",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "matmul",
    "roll",
    "take",
    "save_tensor",
    "load_tensor",
]

_state = threading.local()
_default_dtype = np.dtype(np.float32)


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from finite inputs."""


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
    """Temporarily switch the creation dtype (float64 for gradient checks)."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    """N-d real array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "_is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else _default_dtype
        self.data = np.asarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._is_leaf = True

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
    def is_leaf(self) -> bool:
        return self._is_leaf

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("out", "inputs", "adjoint", "name")

    def __init__(self, out, inputs, adjoint, name):
        self.out = out
        self.inputs = inputs
        self.adjoint = adjoint
        self.name = name


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; while active, ops whose inputs require gradients
    append a record. A tape belongs to one thread.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def op_names(self) -> list[str]:
        return [r.name for r in self.records]


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def _active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record():
    """Suspend recording (e.g. for evaluation inside a training loop)."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def capture(t: Tensor) -> np.ndarray:
    """Value snapshot of ``t.data`` for use in an adjoint.

    Op outputs are read-only and shared; anything else is copied so later
    mutation cannot leak into the backward pass.
    """
    if t.data.flags.writeable:
        return t.data.copy()
    return t.data


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} produced non-finite values")


def make_result(data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable, name: str) -> Tensor:
    """Wrap ``data`` as an op output and record it when any input needs a gradient.

    ``adjoint(g)`` must return one gradient (or None) per input.
    """
    check_finite(data, name)
    out = Tensor.__new__(Tensor)
    if not isinstance(data, np.ndarray):
        data = np.array(data)
    elif not data.flags.c_contiguous:
        data = np.ascontiguousarray(data)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out._is_leaf = True
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_leaf = False
        tape.records.append(_Record(out, tuple(inputs), adjoint, name))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring it."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if loss.is_leaf or not any(r.out is loss for r in reversed(tape.records)):
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        in_grads = rec.adjoint(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(f"adjoint of {rec.name} returned shape {gi.shape} for input {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t.is_leaf:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.pop(key).astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# basic ops


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _default_dtype))


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad = capture(a) if b.requires_grad else None
    bd = capture(b) if a.requires_grad else None
    sa, sb = a.shape, b.shape

    def adjoint(g):
        ga = unbroadcast(g * bd, sa) if bd is not None else None
        gb = unbroadcast(g * ad, sb) if ad is not None else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), adjoint, "mul")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def abs(a: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(a.data)  # subgradient 0 at exact zero
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), adjoint, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(a.dtype),)

    return make_result(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), adjoint, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        out = np.zeros(shape, dtype=dtype)
        out[index] = g
        return (out,)

    return make_result(np.array(a.data[index]), (a,), adjoint, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, adjoint, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    ad = capture(a) if b.requires_grad else None
    bd = capture(b) if a.requires_grad else None
    sa, sb = a.shape, b.shape

    def adjoint(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), sa) if bd is not None else None
        gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), sb) if ad is not None else None
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), adjoint, "matmul")


def roll(a: Tensor, shifts, axes) -> Tensor:
    neg_shifts = tuple(-s for s in shifts)
    return make_result(np.roll(a.data, shifts, axes), (a,), lambda g: (np.roll(g, neg_shifts, axes),), "roll")


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of ``a`` along axis 0 (``a.data[indices]``)."""
    indices = np.asarray(indices)
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, indices, g)
        return (out,)

    return make_result(a.data[indices], (a,), adjoint, "take")


# ---------------------------------------------------------------------------
# serialization: "LCET" | u32 rank | u32 extents... | f32 little-endian payload

_MAGIC = b"LCET"


def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t)
    head = _MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != _MAGIC:
        raise ValueError("not an LCET tensor")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    off = 8 + 4 * rank
    n = int(np.prod(shape)) if rank else 1
    payload = buf[off:]
    if len(payload) != 4 * n:
        raise ValueError(f"LCET payload holds {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    return Tensor(data)


def save_tensor(path, t) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


def zeros_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
