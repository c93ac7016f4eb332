"""Small numpy-backed tensor engine with a reverse-mode gradient tape.

Layout is always batch-height-width-channel (NHWC), row-major.  Values are
float32 unless a wider precision is selected with :func:`precision`, which
exists so finite-difference gradient checks have enough headroom.

Every operation checks its output for NaN/Inf and raises
:class:`~imnet.errors.NonFiniteError` instead of propagating garbage.

Differentiation follows the tape model::

    with GradTape() as tape:
        y = relu(conv2d(x, w, padding=1))
        loss = mean(y)
    gw, = tape.gradient(loss, [w])

Operations executed while a tape is active, and that touch at least one
tensor with ``requires_grad``, are appended to the tape.  ``gradient`` walks
the recorded list backwards, which is a valid reverse topological order
because a record can only be added after all of its inputs exist.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .errors import NonFiniteError, ShapeError

MAX_RANK = 4

_default_dtype = [np.dtype(np.float32)]


def default_dtype() -> np.dtype:
    return _default_dtype[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Temporarily switch the dtype used for new tensors and parameters."""
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dt}")
    _default_dtype.append(dt)
    try:
        yield dt
    finally:
        _default_dtype.pop()


@contextlib.contextmanager
def deterministic(enabled: bool = True):
    """Pin BLAS to one thread so repeated runs are bit-identical."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield


# Branch decisions of piecewise ops (ReLU masks, pooling winners, sort
# picks), collected only while a gradient check asks for them.
_branch_logs: list = []


@contextlib.contextmanager
def branch_log() -> Iterator[list]:
    """Collect ``(op, decision)`` pairs from non-smooth ops run inside."""
    log: list = []
    _branch_logs.append(log)
    try:
        yield log
    finally:
        _branch_logs.pop()


def note_branch(op: str, decision: np.ndarray) -> None:
    if _branch_logs:
        _branch_logs[-1].append((op, np.array(decision, copy=True)))


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(op)


class Tensor:
    """Dense array of rank at most four, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise ShapeError("Tensor", arr.shape, detail=f"rank > {MAX_RANK}")
        _check_finite(name or "Tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Record:
    op: str
    out: Tensor
    inputs: tuple
    backward: Callable


class GradTape:
    """Ordered log of differentiable operations.

    ``visited`` holds the op names touched by the most recent
    :meth:`gradient` call, in the order they were replayed.
    """

    _active: list["GradTape"] = []

    def __init__(self):
        self.records: list[_Record] = []
        self.visited: list[str] = []

    def __enter__(self) -> "GradTape":
        GradTape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        GradTape._active.remove(self)

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Gradients of ``target`` with respect to each tensor in ``sources``.

        ``seed`` defaults to ones, so for a scalar target this is the plain
        gradient.  Sources the target does not depend on get exact zeros.
        """
        grads: dict[int, np.ndarray] = {}
        if seed is None:
            seed = np.ones_like(target.data)
        grads[id(target)] = np.asarray(seed, dtype=target.dtype)
        self.visited = []
        for rec in reversed(self.records):
            g = grads.get(id(rec.out))
            if g is None:
                continue
            self.visited.append(rec.op)
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                _check_finite(rec.op + ".backward", gi)
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros_like(s.data) if g is None else g.reshape(s.shape))
        return out


def record_op(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out_data`` as the result of ``op`` and log it on active tapes.

    ``backward(g)`` must return one gradient (or ``None``) per input.
    """
    _check_finite(op, out_data)
    if out_data.ndim > MAX_RANK:
        raise ShapeError(op, out_data.shape, detail=f"rank > {MAX_RANK}")
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, tracked)
    if tracked and GradTape._active:
        rec = _Record(op, out, tuple(inputs), backward)
        for tape in GradTape._active:
            tape.records.append(rec)
    return out


# ---------------------------------------------------------------------------
# elementwise


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return record_op("mul", x * y, (a, b), lambda g: (g * y, g * x))


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return record_op("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    note_branch("relu", mask)
    return record_op("relu", a.data * mask, (a,), lambda g: (g * mask,))


def one_minus(a: Tensor) -> Tensor:
    return record_op("one_minus", 1 - a.data, (a,), lambda g: (-g,))


_UNARY = {"sigmoid": sigmoid, "relu": relu, "one_minus": one_minus}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name: add, sub, mul (binary) or sigmoid, relu, one_minus."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# structural


def concat_channels(*ts: Tensor) -> Tensor:
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat_channels", *(t.shape for t in ts))
    sizes = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return record_op("concat_channels", np.concatenate([t.data for t in ts], axis=-1), ts, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    C = x.shape[-1]
    if not 0 <= start < stop <= C:
        raise ShapeError("slice_channels", x.shape, detail=f"range {start}:{stop}")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return record_op("slice_channels", x.data[..., start:stop], (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return record_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return record_op("mean", np.asarray(x.data.mean(dtype=x.dtype)).reshape(()), (x,),
                     lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` for a constant weight array."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError("weighted_sum", x.shape, w.shape)
    return record_op("weighted_sum", np.asarray((x.data * w).sum()).reshape(()), (x,),
                     lambda g: (g * w,))


# ---------------------------------------------------------------------------
# convolution and resampling


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation, NHWC input, kernel laid out (kh, kw, cin, cout)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="expected rank-4 input and kernel")
    B, H, W, C = x.shape
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="kernel spatial dims must be odd")
    if cin != C:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="channel mismatch")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d", kernel.shape, bias.shape, detail="bias must be (cout,)")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    Ho, Wo = _conv_out(H, kh, stride, padding), _conv_out(W, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d", x.shape, kernel.shape, detail="empty output")

    w2 = kernel.data.reshape(kh * kw * cin, cout)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        cols = x.data.reshape(B * H * W, C)
        xp_shape = None
    else:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
        xp = np.ascontiguousarray(xp)
        s0, s1, s2, s3 = xp.strides
        win = as_strided(xp, (B, Ho, Wo, kh, kw, C), (s0, s1 * stride, s2 * stride, s1, s2, s3),
                         writeable=False)
        cols = win.reshape(B * Ho * Wo, kh * kw * C)
        xp_shape = xp.shape
    out = cols @ w2
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            q = kh - 1 - padding
            if xp_shape is None:
                gx = (g2 @ w2.T).reshape(x.shape)
            elif stride == 1 and q >= 0 and kw - 1 - padding == q:
                # transposed convolution: correlate the padded gradient with the flipped kernel
                gp = np.pad(g, ((0, 0), (q, q), (q, q), (0, 0))) if q else np.ascontiguousarray(g)
                t0, t1, t2, t3 = gp.strides
                gwin = as_strided(gp, (B, H, W, kh, kw, cout), (t0, t1, t2, t1, t2, t3), writeable=False)
                wf = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
                gx = (gwin.reshape(B * H * W, kh * kw * cout) @ wf).reshape(x.shape)
            else:
                gcols = g2 @ w2.T
                gcols = gcols.reshape(B, Ho, Wo, kh, kw, C)
                gxp = np.zeros(xp_shape, dtype=x.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * (Ho - 1) + 1:stride,
                            j:j + stride * (Wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
                gx = gxp[:, padding:padding + H, padding:padding + W, :]
        grads = (gx, gk)
        return grads + (gb,) if bias is not None else grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record_op("conv2d", out, inputs, backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pool; ties route the gradient to the first maximum."""
    B, H, W, C = x.shape
    if H % size or W % size:
        raise ShapeError("max_pool2d", x.shape, detail=f"spatial dims not divisible by {size}")
    Ho, Wo = H // size, W // size
    blocks = x.data.reshape(B, Ho, size, Wo, size, C).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(B, Ho, Wo, C, size * size)
    idx = blocks.argmax(axis=-1)
    note_branch("max_pool2d", idx)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((B, Ho, Wo, C, size * size), dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, Ho, Wo, C, size, size).transpose(0, 1, 4, 2, 5, 3)
        return (gb.reshape(B, H, W, C),)

    return record_op("max_pool2d", out, (x,), backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, H, W, C = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(B, H, factor, W, factor, C).sum(axis=(2, 4)),)

    return record_op("upsample_nearest", out, (x,), backward)


def softmax_channels(logits: Tensor) -> Tensor:
    """Per-pixel softmax over the last axis, stabilised by max subtraction."""
    if logits.shape[-1] < 2:
        raise ShapeError("softmax_channels", logits.shape, detail="need at least 2 channels")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record_op("softmax_channels", p, (logits,), backward)
