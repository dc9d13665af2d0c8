"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor is a thin wrapper around a C-contiguous float64 numpy array and is
treated as an immutable value. Differentiable operations are module-level
functions (plus operator sugar on Tensor). While a Tape is active, each
operation appends one node holding the saved forward values and a closure
that maps output gradients to input gradients; without an active tape the
same functions are plain numpy computations, which is the inference path.

The tape is append-only, so node order is already a topological order of
the data flow. backward() walks it once in reverse, accumulating gradients
by summation, and a tape is single use: a second backward call is refused.
Broadcasting in binary ops is restricted to trailing-axis alignment (bias
style), which keeps the gradient reduction rule to a single case.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "GradientMap",
    "active_tape",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "tanh",
    "sigmoid",
    "relu",
    "log",
    "softmax",
    "sum_all",
    "mean",
    "stack_rows",
    "row",
    "pick",
    "conv1x1",
    "conv3x3",
    "max_pool2x2",
    "global_avg_pool",
    "glorot_uniform",
    "zeros",
]

TensorLike = Union["Tensor", float, int, np.ndarray]


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """An n-dimensional array of float64 values in row-major storage."""

    __slots__ = ("data",)

    def __init__(self, values):
        self.data = _as_array(values)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(())[()])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Operator sugar; all arithmetic routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return sum_all(self)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    """Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape))


# --------------------------------------------------------------------------
# Tape

BackwardFn = Callable[[tuple], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("inputs", "outputs", "backward", "name")

    def __init__(self, inputs, outputs, backward, name):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward
        self.name = name


class GradientMap:
    """Read-only view of the gradients a backward pass produced."""

    def __init__(self, tape: "Tape"):
        self._tape = tape

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self._tape.grad(t)


class Tape:
    """Records one forward pass and differentiates it once.

    Use as a context manager; operations executed inside the block are
    recorded. Tensors first seen as operation inputs become leaves, and
    parameters can be registered up front with watch() so that grad()
    returns zeros for them even if the forward pass never touched them.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._slot_by_id: dict[int, int] = {}
        self._tensors: list[Tensor] = []
        self._grads: Optional[list] = None
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise ContractViolation("tape context exits out of order")
        return False

    def watch(self, t: Tensor) -> None:
        self._slot(t)

    def _slot(self, t: Tensor) -> int:
        slot = self._slot_by_id.get(id(t))
        if slot is None:
            slot = len(self._tensors)
            self._slot_by_id[id(t)] = slot
            self._tensors.append(t)
        return slot

    def record(self, inputs: Sequence[Optional[Tensor]], outputs: Sequence[Tensor],
               backward: BackwardFn, name: str = "") -> None:
        if self._consumed:
            raise ContractViolation("tape already differentiated; use a fresh Tape")
        in_slots = tuple(None if t is None else self._slot(t) for t in inputs)
        out_slots = tuple(self._slot(t) for t in outputs)
        self._nodes.append(_Node(in_slots, out_slots, backward, name))

    def backward(self, loss: Tensor) -> GradientMap:
        """Accumulate d(loss)/d(tensor) for every tensor on the tape."""
        if self._consumed:
            raise ContractViolation("tape already differentiated; use a fresh Tape")
        if not isinstance(loss, Tensor) or loss.shape != ():
            shape = getattr(loss, "shape", type(loss))
            raise ContractViolation(f"backward needs a scalar loss, got shape {shape}")
        slot = self._slot_by_id.get(id(loss))
        if slot is None:
            raise ContractViolation("loss was not computed under this tape")
        self._consumed = True
        grads: list[Optional[np.ndarray]] = [None] * len(self._tensors)
        grads[slot] = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if all(grads[s] is None for s in node.outputs):
                continue
            out_grads = tuple(
                grads[s] if grads[s] is not None
                else np.zeros_like(self._tensors[s].data)
                for s in node.outputs
            )
            in_grads = node.backward(out_grads)
            for s, g in zip(node.inputs, in_grads):
                if s is None or g is None:
                    continue
                # Fresh allocation on accumulate; closures may return views.
                grads[s] = g if grads[s] is None else grads[s] + g
        self._grads = grads
        return GradientMap(self)

    def grad(self, t: Tensor) -> np.ndarray:
        if self._grads is None:
            raise ContractViolation("backward has not run on this tape")
        slot = self._slot_by_id.get(id(t))
        if slot is None or self._grads[slot] is None:
            return np.zeros_like(t.data)
        return self._grads[slot]


_TAPE_STACK: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(inputs, outputs, backward, name):
    tape = active_tape()
    if tape is not None:
        tape.record(inputs, outputs, backward, name)


def _ensure_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# Elementwise and broadcasting

def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    # Equal shapes, or one shape must be a trailing suffix of the other.
    if sa == sb:
        return
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} do not align on trailing axes")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = Tensor(a.data + b.data)
    sa, sb = a.shape, b.shape

    def backward(gs):
        (g,) = gs
        return _reduce_to(g, sa), _reduce_to(g, sb)

    _record((a, b), (out,), backward, "add")
    return out


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = Tensor(a.data - b.data)
    sa, sb = a.shape, b.shape

    def backward(gs):
        (g,) = gs
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    _record((a, b), (out,), backward, "sub")
    return out


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def backward(gs):
        (g,) = gs
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    _record((a, b), (out,), backward, "mul")
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def backward(gs):
        (g,) = gs
        return (-g,)

    _record((x,), (out,), backward, "neg")
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python constant; the constant is not differentiated."""
    factor = float(factor)
    out = Tensor(x.data * factor)

    def backward(gs):
        (g,) = gs
        return (g * factor,)

    _record((x,), (out,), backward, "scale")
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward(gs):
        (g,) = gs
        return (g * (1.0 - y * y),)

    _record((x,), (out,), backward, "tanh")
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    out = Tensor(y)

    def backward(gs):
        (g,) = gs
        return (g * y * (1.0 - y),)

    _record((x,), (out,), backward, "sigmoid")
    return out


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)
    mask = x.data > 0.0

    def backward(gs):
        (g,) = gs
        return (g * mask,)

    _record((x,), (out,), backward, "relu")
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    xd = x.data

    def backward(gs):
        (g,) = gs
        return (g / xd,)

    _record((x,), (out,), backward, "log")
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis; slices sum to one."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(gs):
        (g,) = gs
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    _record((x,), (out,), backward, "softmax")
    return out


# --------------------------------------------------------------------------
# Linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def backward(gs):
        (g,) = gs
        return g @ bd.T, ad.T @ g

    _record((a, b), (out,), backward, "matmul")
    return out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose: needs a rank-2 operand, got {x.shape}")
    out = Tensor(x.data.T)

    def backward(gs):
        (g,) = gs
        return (g.T,)

    _record((x,), (out,), backward, "transpose")
    return out


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    old = x.shape

    def backward(gs):
        (g,) = gs
        return (g.reshape(old),)

    _record((x,), (out,), backward, "reshape")
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    shape = x.shape

    def backward(gs):
        (g,) = gs
        return (np.broadcast_to(g, shape).copy(),)

    _record((x,), (out,), backward, "sum")
    return out


def mean(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"mean: axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    out = Tensor(x.data.mean(axis=axis))
    n = x.shape[axis]
    shape = x.shape

    def backward(gs):
        (g,) = gs
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    _record((x,), (out,), backward, "mean")
    return out


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors into a new leading axis."""
    if len(tensors) == 0:
        raise ContractViolation("stack_rows: empty input list")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise DimensionError(f"stack_rows: mixed shapes {first} and {t.shape}")
    out = Tensor(np.stack([t.data for t in tensors], axis=0))

    def backward(gs):
        (g,) = gs
        return tuple(g[k] for k in range(len(tensors)))

    _record(tuple(tensors), (out,), backward, "stack_rows")
    return out


def row(x: Tensor, index: int) -> Tensor:
    if x.ndim < 1 or not 0 <= index < x.shape[0]:
        raise DimensionError(f"row: index {index} out of range for shape {x.shape}")
    out = Tensor(x.data[index])
    shape = x.shape

    def backward(gs):
        (g,) = gs
        full = np.zeros(shape, dtype=np.float64)
        full[index] = g
        return (full,)

    _record((x,), (out,), backward, "row")
    return out


def pick(x: Tensor, index: int) -> Tensor:
    """Select one element of a vector as a scalar."""
    if x.ndim != 1:
        raise DimensionError(f"pick: needs a rank-1 operand, got {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise ContractViolation(f"pick: index {index} outside [0, {x.shape[0]})")
    out = Tensor(x.data[index])
    n = x.shape[0]

    def backward(gs):
        (g,) = gs
        full = np.zeros(n, dtype=np.float64)
        full[index] = g
        return (full,)

    _record((x,), (out,), backward, "pick")
    return out


# --------------------------------------------------------------------------
# Spatial ops on (H, W, C) maps

def _check_map(x: Tensor, op: str) -> None:
    if x.ndim != 3:
        raise DimensionError(f"{op}: needs an (H, W, C) map, got {x.shape}")


def conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Pointwise channel mixing; identical to matmul on the (H*W, C) view."""
    _check_map(x, "conv1x1")
    if w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise DimensionError(f"conv1x1: weight {w.shape} does not fit map {x.shape}")
    h, wd, cin = x.shape
    cout = w.shape[1]
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv1x1: bias {b.shape} does not fit {cout} channels")
    flat = x.data.reshape(h * wd, cin)
    y = flat @ w.data
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(h, wd, cout))
    wd_data = w.data

    def backward(gs):
        (g,) = gs
        gm = g.reshape(h * wd, cout)
        gx = (gm @ wd_data.T).reshape(h, wd, cin)
        gw = flat.T @ gm
        gb = None if b is None else gm.sum(axis=0)
        return gx, gw, gb

    _record((x, w, b), (out,), backward, "conv1x1")
    return out


def _conv_geometry(size: int, stride: int, padding: str) -> tuple:
    # Returns (out_size, pad_before, pad_after) for a 3-tap kernel.
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + 3 - size, 0)
        before = total // 2
        return out, before, total - before
    if padding == "valid":
        if size < 3:
            raise DimensionError(f"conv3x3: size {size} too small for a valid 3x3 window")
        return (size - 3) // stride + 1, 0, 0
    raise ContractViolation(f"conv3x3: unknown padding {padding!r}")


def conv3x3(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
            stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation with a 3x3 kernel over an (H, W, C) map."""
    _check_map(x, "conv3x3")
    if w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[2]:
        raise DimensionError(f"conv3x3: weight {w.shape} does not fit map {x.shape}")
    if stride < 1:
        raise ContractViolation(f"conv3x3: stride must be positive, got {stride}")
    h, wd, cin = x.shape
    cout = w.shape[3]
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv3x3: bias {b.shape} does not fit {cout} channels")
    out_h, pt, pb = _conv_geometry(h, stride, padding)
    out_w, pl, pr = _conv_geometry(wd, stride, padding)
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)))
    # Window layout (out_h, out_w, 3, 3, cin) so cols match w.reshape(9*cin, cout).
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))
    win = win[::stride, ::stride].transpose(0, 1, 3, 4, 2)
    cols = np.ascontiguousarray(win).reshape(out_h * out_w, 9 * cin)
    wmat = w.data.reshape(9 * cin, cout)
    y = cols @ wmat
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(out_h, out_w, cout))
    padded_shape = xp.shape

    def backward(gs):
        (g,) = gs
        gm = g.reshape(out_h * out_w, cout)
        gw = (cols.T @ gm).reshape(3, 3, cin, cout)
        gb = None if b is None else gm.sum(axis=0)
        gcols = (gm @ wmat.T).reshape(out_h, out_w, 3, 3, cin)
        gxp = np.zeros(padded_shape, dtype=np.float64)
        for ki in range(3):
            for kj in range(3):
                gxp[ki:ki + out_h * stride:stride,
                    kj:kj + out_w * stride:stride] += gcols[:, :, ki, kj]
        gx = gxp[pt:pt + h, pl:pl + wd]
        return gx, gw, gb

    _record((x, w, b), (out,), backward, "conv3x3")
    return out


def max_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; needs even spatial dimensions."""
    _check_map(x, "max_pool2x2")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2x2: spatial size {h}x{w} is not even")
    blocks = x.data.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4)
    blocks = blocks.reshape(h // 2, w // 2, 4, c)
    arg = blocks.argmax(axis=2)
    out = Tensor(np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :])

    def backward(gs):
        (g,) = gs
        gblocks = np.zeros((h // 2, w // 2, 4, c), dtype=np.float64)
        np.put_along_axis(gblocks, arg[:, :, None, :], g[:, :, None, :], axis=2)
        gx = gblocks.reshape(h // 2, w // 2, 2, 2, c).transpose(0, 2, 1, 3, 4)
        return (gx.reshape(h, w, c),)

    _record((x,), (out,), backward, "max_pool2x2")
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of an (H, W, C) map, returning a length-C vector."""
    _check_map(x, "global_avg_pool")
    h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(0, 1)))

    def backward(gs):
        (g,) = gs
        return (np.broadcast_to(g, (h, w, c)) / (h * w),)

    _record((x,), (out,), backward, "global_avg_pool")
    return out
