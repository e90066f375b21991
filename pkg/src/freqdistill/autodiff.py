"""Dense 4-D tensors with reverse-mode differentiation.

Just enough machinery for a small convolutional encoder-decoder: direct
cross-correlation conv, 1x1 conv (same op), 2x2 max pooling, nearest and
bilinear upsampling, elementwise arithmetic, reductions and sigmoid.

Model state lives in 32-bit floats; convolution inner loops and
reductions accumulate in 64-bit to keep finite-difference gradient
checks tight.  Operations executed while a :class:`Tape` is active are
recorded in execution order; :func:`backward` replays the records in
exact reverse order, accumulating gradients additively whenever a tensor
feeds several consumers.  Tensors are immutable after construction and
safe to share across threads; a tape and the parameters it touches
belong to a single training thread.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, TapeError
from .interp import linear_interp_matrix

Scalar = Union[int, float]


class Tensor4:
    """A (batch, channels, height, width) grid of 32-bit floats."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, validate: bool = True):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 4:
            raise DimensionError("rank", f"expected 4 axes, got shape {arr.shape}")
        if validate and not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional["Tape"] = None

    @classmethod
    def _raw(cls, arr: np.ndarray) -> "Tensor4":
        """Wrap an op result without re-validating (internal use)."""
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.tape = None
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor4":
        return cls._raw(np.zeros(tuple(shape), dtype=np.float32))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor4":
        return cls._raw(np.full(tuple(shape), value, dtype=np.float32))

    @classmethod
    def scalar(cls, value: float) -> "Tensor4":
        return cls._raw(np.full((1, 1, 1, 1), value, dtype=np.float32))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("size", f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def _bump(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape})"

    # arithmetic sugar; definitions live in the module-level ops below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter:
    """A trainable tensor plus its gradient accumulator.

    The gradient always has the value's shape.  Freezing a parameter
    zeroes the gradient and stops any further accumulation, so a frozen
    parameter reads all-zero gradients after every backward pass.
    """

    __slots__ = ("value", "grad", "trainable")

    def __init__(self, value, trainable: bool = True):
        self.value = value if isinstance(value, Tensor4) else Tensor4(value)
        self.grad = np.zeros_like(self.value.data)
        self.trainable = bool(trainable)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = bool(trainable)
        if not trainable:
            self.zero_grad()

    def _bump(self, grad: np.ndarray) -> None:
        if self.trainable:
            self.grad += grad

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, trainable={self.trainable})"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside record themselves.
    A tape supports exactly one backward pass.
    """

    __slots__ = ("_records", "_spent")

    def __init__(self):
        self._records: list[tuple[Tensor4, Callable[[np.ndarray], None]]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor4, pull: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None:
        tape._records.append((out, pull))
        out.tape = tape


def backward(tape: Tape, loss: Tensor4) -> None:
    """Accumulate d(loss)/d(x) into every tensor and parameter on the tape."""
    if tape._spent:
        raise TapeError("backward called twice on the same tape; run a new forward pass")
    if loss.shape != (1, 1, 1, 1):
        raise TapeError(f"loss must be scalar-shaped (1,1,1,1), got {loss.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not produced on this tape")
    tape._spent = True
    loss.grad = np.ones((1, 1, 1, 1), dtype=np.float32)
    for out, pull in reversed(tape._records):
        if out.grad is not None:
            pull(out.grad)


def _lift(value, like: Tensor4) -> Tensor4:
    if isinstance(value, Tensor4):
        return value
    return Tensor4.scalar(float(value))


def _pair_shapes(a: Tensor4, b: Tensor4) -> None:
    # elementwise ops allow equal shapes, or a (1,1,1,1) scalar on either side
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db:
            name = ("batch", "channels", "height", "width")[axis]
            raise DimensionError(name, f"operands differ: {a.shape} vs {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # the only broadcast we permit is scalar-vs-full
    return grad.sum(dtype=np.float64).astype(np.float32).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor4, b) -> Tensor4:
    b = _lift(b, a)
    _pair_shapes(a, b)
    out = Tensor4._raw(a.data + b.data)

    def pull(g: np.ndarray) -> None:
        a._bump(_reduce_to(g, a.data.shape))
        b._bump(_reduce_to(g, b.data.shape))

    _record(out, pull)
    return out


def sub(a: Tensor4, b) -> Tensor4:
    b = _lift(b, a)
    _pair_shapes(a, b)
    out = Tensor4._raw(a.data - b.data)

    def pull(g: np.ndarray) -> None:
        a._bump(_reduce_to(g, a.data.shape))
        b._bump(_reduce_to(-g, b.data.shape))

    _record(out, pull)
    return out


def mul(a: Tensor4, b) -> Tensor4:
    b = _lift(b, a)
    _pair_shapes(a, b)
    out = Tensor4._raw(a.data * b.data)

    def pull(g: np.ndarray) -> None:
        a._bump(_reduce_to(g * b.data, a.data.shape))
        b._bump(_reduce_to(g * a.data, b.data.shape))

    _record(out, pull)
    return out


def div(a: Tensor4, b) -> Tensor4:
    b = _lift(b, a)
    _pair_shapes(a, b)
    out = Tensor4._raw(a.data / b.data)

    def pull(g: np.ndarray) -> None:
        a._bump(_reduce_to(g / b.data, a.data.shape))
        b._bump(_reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, pull)
    return out


def square(x: Tensor4) -> Tensor4:
    out = Tensor4._raw(x.data * x.data)

    def pull(g: np.ndarray) -> None:
        x._bump(g * (2.0 * x.data))

    _record(out, pull)
    return out


def log(x: Tensor4) -> Tensor4:
    out = Tensor4._raw(np.log(x.data))

    def pull(g: np.ndarray) -> None:
        x._bump(g / x.data)

    _record(out, pull)
    return out


def clip(x: Tensor4, lo: float, hi: float) -> Tensor4:
    out = Tensor4._raw(np.clip(x.data, lo, hi))
    mask = ((x.data > lo) & (x.data < hi)).astype(np.float32)

    def pull(g: np.ndarray) -> None:
        x._bump(g * mask)

    _record(out, pull)
    return out


def sigmoid(x: Tensor4) -> Tensor4:
    z = x.data.astype(np.float64)
    y = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
    out = Tensor4._raw(y.astype(np.float32))

    def pull(g: np.ndarray) -> None:
        y32 = out.data
        x._bump(g * y32 * (1.0 - y32))

    _record(out, pull)
    return out


def relu(x: Tensor4) -> Tensor4:
    out = Tensor4._raw(np.maximum(x.data, 0.0))

    def pull(g: np.ndarray) -> None:
        x._bump(g * (x.data > 0))

    _record(out, pull)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor4) -> Tensor4:
    total = x.data.sum(dtype=np.float64)
    out = Tensor4._raw(np.full((1, 1, 1, 1), total, dtype=np.float32))

    def pull(g: np.ndarray) -> None:
        x._bump(np.full(x.data.shape, float(g.reshape(-1)[0]), dtype=np.float32))

    _record(out, pull)
    return out


def mean_all(x: Tensor4) -> Tensor4:
    n = x.data.size
    total = x.data.sum(dtype=np.float64) / n
    out = Tensor4._raw(np.full((1, 1, 1, 1), total, dtype=np.float32))

    def pull(g: np.ndarray) -> None:
        x._bump(np.full(x.data.shape, float(g.reshape(-1)[0]) / n, dtype=np.float32))

    _record(out, pull)
    return out


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(tensors: Sequence[Tensor4]) -> Tensor4:
    if not tensors:
        raise DimensionError("channels", "concat_channels needs at least one input")
    first = tensors[0]
    for t in tensors[1:]:
        for axis, name in ((0, "batch"), (2, "height"), (3, "width")):
            if t.shape[axis] != first.shape[axis]:
                raise DimensionError(
                    name, f"concat_channels inputs differ: {first.shape} vs {t.shape}"
                )
    out = Tensor4._raw(np.concatenate([t.data for t in tensors], axis=1))
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def pull(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            t._bump(piece)

    _record(out, pull)
    return out


def maxpool2(x: Tensor4) -> Tensor4:
    b, c, h, w = x.shape
    if h % 2 != 0 or h < 2:
        raise DimensionError("height", f"maxpool2 needs an even height >= 2, got {h}")
    if w % 2 != 0 or w < 2:
        raise DimensionError("width", f"maxpool2 needs an even width >= 2, got {w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = Tensor4._raw(np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0])

    def pull(g: np.ndarray) -> None:
        gb = np.zeros((b, c, h // 2, w // 2, 4), dtype=np.float32)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x._bump(gb.reshape(b, c, h, w))

    _record(out, pull)
    return out


def upsample2(x: Tensor4) -> Tensor4:
    b, c, h, w = x.shape
    out = Tensor4._raw(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))

    def pull(g: np.ndarray) -> None:
        x._bump(g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5), dtype=np.float64).astype(np.float32))

    _record(out, pull)
    return out


def bilinear_resize(x: Tensor4, target_h: int, target_w: int) -> Tensor4:
    if target_h < 1:
        raise DimensionError("height", f"target height must be >= 1, got {target_h}")
    if target_w < 1:
        raise DimensionError("width", f"target width must be >= 1, got {target_w}")
    _, _, h, w = x.shape
    rows = linear_interp_matrix(h, target_h)
    cols = linear_interp_matrix(w, target_w)
    x64 = x.data.astype(np.float64)
    out64 = np.einsum("oh,bchw,pw->bcop", rows, x64, cols, optimize=True)
    out = Tensor4._raw(out64.astype(np.float32))

    def pull(g: np.ndarray) -> None:
        g64 = g.astype(np.float64)
        gx = np.einsum("oh,bcop,pw->bchw", rows, g64, cols, optimize=True)
        x._bump(gx.astype(np.float32))

    _record(out, pull)
    return out


def conv2d(
    x: Tensor4,
    weights: Parameter,
    bias: Optional[Parameter] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor4:
    """Cross-correlation with square kernels, recorded for backprop.

    Weight layout is (out_channels, in_channels, k, k); bias, when
    present, is (1, out_channels, 1, 1).
    """
    if stride < 1:
        raise DimensionError("stride", f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise DimensionError("padding", f"padding must be >= 0, got {padding}")
    b, cin, h, w = x.shape
    cout, wc, kh, kw = weights.shape
    if kh != kw:
        raise DimensionError("kernel", f"kernels must be square, got {kh}x{kw}")
    if wc != cin:
        raise DimensionError("channels", f"input has {cin} channels, weights expect {wc}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise DimensionError("channels", f"bias shape {bias.shape} != (1, {cout}, 1, 1)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or ho < 1:
        raise DimensionError("height", f"output height {ho} not positive for input {h}")
    if w + 2 * padding < kw or wo < 1:
        raise DimensionError("width", f"output width {wo} not positive for input {w}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xp64 = xp.astype(np.float64)
    w64 = weights.value.data.astype(np.float64)
    out64 = np.zeros((b, cout, ho, wo), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            window = xp64[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            # (cout,cin) x (b,cin,ho,wo) contracted over cin
            out64 += np.tensordot(w64[:, :, ki, kj], window, axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out64 += bias.value.data.astype(np.float64)
    out = Tensor4._raw(out64.astype(np.float32))

    def pull(g: np.ndarray) -> None:
        g64 = g.astype(np.float64)
        if bias is not None:
            bias._bump(g64.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1).astype(np.float32))
        gw = np.zeros_like(w64)
        gxp = np.zeros_like(xp64)
        for ki in range(kh):
            for kj in range(kw):
                rows = slice(ki, ki + stride * ho, stride)
                cols = slice(kj, kj + stride * wo, stride)
                window = xp64[:, :, rows, cols]
                gw[:, :, ki, kj] = np.tensordot(g64, window, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, rows, cols] += np.tensordot(
                    w64[:, :, ki, kj], g64, axes=([0], [1])
                ).transpose(1, 0, 2, 3)
        weights._bump(gw.astype(np.float32))
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        x._bump(gxp.astype(np.float32))

    _record(out, pull)
    return out
