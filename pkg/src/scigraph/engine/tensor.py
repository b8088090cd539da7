"""N-dimensional tensors with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, float64 for
gradient-check suites).  Operations executed while a :class:`Tape` is active
are recorded as coarse-grained nodes; ``backward`` replays the tape in
reverse, accumulating gradients into every reachable tensor that requires
them.  Parameters keep an additive ``grad`` buffer across backward passes
until explicitly cleared.

Only the primitives the reconstruction networks need are provided; there is
no general broadcasting algebra beyond what those primitives use.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes or dtypes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the recording tape (no tape, non-scalar loss...)."""


_active_tape: "Tape | None" = None
_grad_enabled: bool = True
_debug_checks: bool = False


def set_debug_checks(enabled: bool) -> None:
    """Enable rejection of non-finite inputs at every primitive boundary."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording within the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class TapeNode:
    """One recorded primitive: inputs, output, and its vector-Jacobian rule."""

    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: Sequence["Tensor"], output: "Tensor",
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed primitives.

    Single-writer: one forward/backward pass owns the tape exclusively.
    Use as a context manager::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._outer = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = self._outer
        self._outer = None

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(tensor) into every reachable tensor's grad.

        The tape is visited exactly once in reverse execution order, which is
        a valid topological order by construction.
        """
        if loss.shape != ():
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            holders.pop(id(node.output), None)
            if gout is None:
                continue
            gins = node.backward(gout)
            for inp, gin in zip(node.inputs, gins):
                if gin is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
                    holders[key] = inp
        for key, g in grads.items():
            t = holders[key]
            if not t.requires_grad:
                continue
            g = np.asarray(g, dtype=t.dtype)
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad = t.grad + g


def active_tape() -> Tape | None:
    return _active_tape


def backward(loss: "Tensor") -> None:
    """Backpropagate from a scalar loss recorded on the active tape."""
    if _active_tape is None:
        raise TapeError("backward() called without an active tape")
    _active_tape.backward(loss)


class Tensor:
    """A dense N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # Arithmetic sugar over the primitives below.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; "
                            "compose explicitly if needed")
        return scalar_mul(self, 1.0 / float(other))

    def sum(self, axes=None, keepdims: bool = False):
        return sum_over(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return mean_over(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """A learnable tensor; ``grad`` is zero-initialized and accumulates
    across backward passes until cleared."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def _check_finite(*tensors: Tensor) -> None:
    if not _debug_checks:
        return
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError("non-finite input rejected (debug checks on)")


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(d.name for d in dtypes)}")


def _record(inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a primitive result; record on the active tape when gradients flow."""
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = requires
    out.grad = None
    if requires and _active_tape is not None:
        _active_tape.nodes.append(TapeNode(inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    _check_same_dtype(a, b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} "
                         "are not broadcast-compatible")


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    _check_finite(a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    _check_finite(a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record((a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    _binary_shapes(a, b, "mul")
    _check_finite(a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record((a, b), ad * bd, bwd)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    _check_finite(a)
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _record((a,), a.data * a.dtype.type(c), bwd)


def shift(a: Tensor, c: float) -> Tensor:
    """Add a python scalar constant."""
    _check_finite(a)

    def bwd(g):
        return (g,)

    return _record((a,), a.data + a.dtype.type(c), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    _check_same_dtype(*tensors)
    _check_finite(*tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return np.split(g, splits, axis=axis)

    return _record(tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), bwd)


def slice_op(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; gradient scatters back into a zero buffer."""
    _check_finite(a)
    out_data = np.ascontiguousarray(a.data[key])
    in_shape = a.shape

    def bwd(g):
        buf = np.zeros(in_shape, dtype=g.dtype)
        buf[key] = g
        return (buf,)

    return _record((a,), out_data, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    _check_finite(a)
    in_shape = a.shape
    try:
        out_data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape {in_shape} -> {shape}: {e}") from None

    def bwd(g):
        return (g.reshape(in_shape),)

    return _record((a,), out_data, bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    _check_finite(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _record((a,), np.ascontiguousarray(a.data.transpose(axes)), bwd)


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def sum_over(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    _check_finite(a)
    axes = _norm_axes(axes, a.ndim)
    in_shape = a.shape

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _record((a,), a.data.sum(axis=axes, keepdims=keepdims), bwd)


def mean_over(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    _check_finite(a)
    axes = _norm_axes(axes, a.ndim)
    in_shape = a.shape
    count = 1
    for ax in axes:
        count *= in_shape[ax]
    inv = 1.0 / count

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * a.dtype.type(inv), in_shape).copy(),)

    return _record((a,), a.data.mean(axis=axes, keepdims=keepdims), bwd)


def exp(a: Tensor) -> Tensor:
    _check_finite(a)
    out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return _record((a,), out_data, bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) computed stably."""
    _check_finite(a)
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return (g * sig,)

    return _record((a,), out_data, bwd)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    _check_finite(a)
    x = a.data
    pos = x > 0
    out_data = np.where(pos, x, a.dtype.type(slope) * x)

    def bwd(g):
        return (np.where(pos, g, g * a.dtype.type(slope)),)

    return _record((a,), out_data, bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is passed inside the closed interval."""
    _check_finite(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)

    def bwd(g):
        return (np.where(inside, g, 0),)

    return _record((a,), np.clip(x, lo, hi), bwd)


# ---------------------------------------------------------------------------
# primitive_forward dispatcher (uniform entry point over all op kinds)
# ---------------------------------------------------------------------------

def primitive_forward(op_kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Execute one primitive by name.

    Thin dispatcher over the functional API; the op is recorded on the
    active tape whenever any input requires gradients.
    """
    from . import conv as _conv
    from . import sample as _sample

    table = {
        "add": lambda ins, **kw: add(*ins),
        "sub": lambda ins, **kw: sub(*ins),
        "mul": lambda ins, **kw: mul(*ins),
        "scalar-mul": lambda ins, **kw: scalar_mul(ins[0], kw["scalar"]),
        "concat": lambda ins, **kw: concat(ins, kw["axis"]),
        "slice": lambda ins, **kw: slice_op(ins[0], kw["key"]),
        "reshape": lambda ins, **kw: reshape(ins[0], kw["shape"]),
        "transpose": lambda ins, **kw: transpose(ins[0], kw["axes"]),
        "sum": lambda ins, **kw: sum_over(ins[0], kw.get("axes"), kw.get("keepdims", False)),
        "mean": lambda ins, **kw: mean_over(ins[0], kw.get("axes"), kw.get("keepdims", False)),
        "exp": lambda ins, **kw: exp(ins[0]),
        "softplus": lambda ins, **kw: softplus(ins[0]),
        "leaky-relu": lambda ins, **kw: leaky_relu(ins[0], kw.get("slope", 0.1)),
        "clip": lambda ins, **kw: clip(ins[0], kw["lo"], kw["hi"]),
        "conv2d": lambda ins, **kw: _conv.conv2d(*ins),
        "conv3d": lambda ins, **kw: _conv.conv3d(*ins),
        "pointwise-linear": lambda ins, **kw: _conv.pointwise_linear(*ins),
        "bilinear-grid-sample": lambda ins, **kw: _sample.bilinear_grid_sample(*ins),
    }
    if op_kind not in table:
        raise KeyError(f"unknown op kind: {op_kind!r}")
    return table[op_kind](tuple(inputs), **attrs)
