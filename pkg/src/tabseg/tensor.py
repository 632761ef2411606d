"""Dense tensors with a dynamic reverse-mode tape.

Every op takes :class:`Tensor` inputs, computes its result eagerly with numpy
and, when any input requires a gradient, records a closure that pushes the
output gradient back to its parents.  ``Tensor.backward`` walks the tape in
reverse topological order; gradients reaching a tensor along several paths are
summed.

Volumetric ops accept either ``[C, D, H, W]`` or batched ``[B, C, D, H, W]``
input.  Compute is float32 unless :func:`high_precision` is active, which is
meant for finite-difference gradient checks.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError

_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype() -> type:
    return _DTYPE


@contextlib.contextmanager
def high_precision():
    """Build tensors and parameters in float64 inside the block."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable tape recording, e.g. for evaluation passes."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NumericError(f"{what}: {bad} non-finite value(s)")
        return self

    # -- autodiff -----------------------------------------------------------
    def backward(self, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        # only leaves accumulate across calls; interior buffers start empty
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            node.grad = None
            if not retain_graph:
                node._backward = None
                node._parents = ()

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        _accum(x, 2.0 * x.data * g)

    return _make(x.data * x.data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    # np.maximum keeps NaN so numeric failures surface in the loss
    return _make(np.maximum(x.data, 0).astype(x.dtype), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # stable in both tails
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def backward(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, (x,), backward)


# -- reductions and reshapes --------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def backward(g):
        _accum(x, g.reshape(src))

    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ConfigurationError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return _make(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(x, np.transpose(g, inverse))

    return _make(np.transpose(x.data, axes), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        for ax, (p, q) in enumerate(zip(ref, t.shape)):
            if ax != axis % len(ref) and p != q:
                raise ConfigurationError(
                    f"concat: dimension {ax} differs ({p} vs {q})"
                )
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of ``[C,...]`` or ``[B,C,...]`` volumes."""
    axis = 1 if a.ndim == 5 else 0
    return concat([a, b], axis=axis)


# -- dense algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ConfigurationError(f"matmul: inner dimensions {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[d_in, d_out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise ConfigurationError(
            f"linear: input feature dimension {x.shape[-1]} != weight d_in {weight.shape[0]}"
        )
    y = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ConfigurationError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
        y = add(y, bias)
    return y


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ConfigurationError(f"softmax: axis {axis} out of range for {x.ndim}-d input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        _accum(x, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(y.astype(x.dtype), (x,), backward)


def _normalize_backward(g_hat: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, axis):
    # gradient of (x - mean) / std w.r.t. x, reduced over `axis`
    m1 = np.mean(g_hat, axis=axis, keepdims=True)
    m2 = np.mean(g_hat * xhat, axis=axis, keepdims=True)
    return inv_std * (g_hat - m1 - xhat * m2)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine map."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigurationError(f"layer_norm: affine shape must be ({d},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            _accum(gamma, np.sum(g * xhat, axis=lead))
        if beta.requires_grad:
            _accum(beta, np.sum(g, axis=lead))
        if x.requires_grad:
            _accum(x, _normalize_backward(g * gamma.data, xhat, inv_std, -1))

    return _make(out.astype(x.dtype), (x, gamma, beta), backward)


def _batched(x: Tensor, op: str) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 5:
        return x, False
    raise ConfigurationError(f"{op}: expected [C,D,H,W] or [B,C,D,H,W] input, got shape {x.shape}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization over channel groups of a volume."""
    if eps <= 0:
        raise ConfigurationError("group_norm: eps must be positive")
    xb, squeeze = _batched(x, "group_norm")
    B, C = xb.shape[:2]
    if groups < 1 or C % groups:
        raise ConfigurationError(f"group_norm: channels {C} not divisible by groups {groups}")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ConfigurationError(f"group_norm: affine shape must be ({C},)")
    grouped = xb.data.reshape(B, groups, -1)
    mu = grouped.mean(axis=2, keepdims=True)
    centered = grouped - mu
    var = np.mean(centered * centered, axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(xb.shape)
    bshape = (1, C) + (1,) * (xb.ndim - 2)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, xb.ndim))

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, np.sum(g * xhat, axis=reduce_axes))
        if beta.requires_grad:
            _accum(beta, np.sum(g, axis=reduce_axes))
        if xb.requires_grad:
            g_hat = (g * gamma.data.reshape(bshape)).reshape(B, groups, -1)
            dx = _normalize_backward(g_hat, xhat.reshape(B, groups, -1), inv_std, 2)
            _accum(xb, dx.reshape(xb.shape))

    y = _make(out.astype(xb.dtype), (xb, gamma, beta), backward)
    return _unbatch(y, squeeze)


# -- 3D convolution -------------------------------------------------------------

def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 3D cross-correlation, looping over kernel offsets.

    ``weight`` is ``[C_out, C_in, k, k, k]``.  Each offset contributes one
    channel contraction over a strided view of the padded input.
    """
    xb, squeeze = _batched(x, "conv3d")
    B, Ci, *spatial = xb.shape
    if weight.ndim != 5:
        raise ConfigurationError(f"conv3d: weight must be 5-d, got shape {weight.shape}")
    Co, Ci_w, k = weight.shape[:3]
    if weight.shape[2:] != (k, k, k):
        raise ConfigurationError(f"conv3d: kernel must be cubic, got {weight.shape[2:]}")
    if Ci_w != Ci:
        raise ConfigurationError(f"conv3d: input channels {Ci} != weight in-channels {Ci_w}")
    if k % 2 == 0 and padding:
        raise ConfigurationError(f"conv3d: padded convolution needs an odd kernel, got {k}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv3d: stride {stride} not in (1, 2)")
    for name, extent in zip("DHW", spatial):
        if extent + 2 * padding < k:
            raise ConfigurationError(f"conv3d: spatial dimension {name}={extent} smaller than kernel {k}")
    if bias is not None and bias.shape != (Co,):
        raise ConfigurationError(f"conv3d: bias shape {bias.shape} != ({Co},)")

    out_sp = [conv_output_extent(e, k, stride, padding) for e in spatial]
    # channel-first layout [C, B, D, H, W] keeps every contraction a plain tensordot
    xc = np.ascontiguousarray(np.moveaxis(xb.data, 1, 0))
    if padding:
        xc = np.pad(xc, ((0, 0), (0, 0)) + ((padding, padding),) * 3)
    w = weight.data
    offsets = list(itertools.product(range(k), repeat=3))

    def window(arr, a, b, c):
        return arr[:, :,
                   a:a + stride * (out_sp[0] - 1) + 1:stride,
                   b:b + stride * (out_sp[1] - 1) + 1:stride,
                   c:c + stride * (out_sp[2] - 1) + 1:stride]

    out = np.zeros((Co, B, *out_sp), dtype=xb.dtype)
    for a, b, c in offsets:
        out += np.tensordot(w[:, :, a, b, c], window(xc, a, b, c), axes=(1, 0))
    if bias is not None:
        out += bias.data.reshape(Co, 1, 1, 1, 1)

    def backward(g):
        gc = np.ascontiguousarray(np.moveaxis(g, 1, 0))
        if bias is not None and bias.requires_grad:
            _accum(bias, gc.sum(axis=(1, 2, 3, 4)))
        if weight.requires_grad:
            gw = np.zeros_like(w)
            for a, b, c in offsets:
                gw[:, :, a, b, c] = np.tensordot(gc, window(xc, a, b, c),
                                                 axes=([1, 2, 3, 4], [1, 2, 3, 4]))
            _accum(weight, gw)
        if xb.requires_grad:
            gx = np.zeros_like(xc)
            for a, b, c in offsets:
                window(gx, a, b, c)[...] += np.tensordot(w[:, :, a, b, c].T, gc, axes=(1, 0))
            if padding:
                p = padding
                gx = gx[:, :, p:-p, p:-p, p:-p]
            _accum(xb, np.moveaxis(gx, 0, 1))

    params = (xb, weight) if bias is None else (xb, weight, bias)
    y = _make(np.ascontiguousarray(np.moveaxis(out, 0, 1)), params, backward)
    return _unbatch(y, squeeze)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Transposed convolution (no padding); ``weight`` is ``[C_in, C_out, k, k, k]``.

    Forward equals the input-gradient of :func:`conv3d` run with the same
    weight array, stride and zero padding.
    """
    xb, squeeze = _batched(x, "conv_transpose3d")
    B, Ci, *spatial = xb.shape
    if weight.ndim != 5:
        raise ConfigurationError(f"conv_transpose3d: weight must be 5-d, got shape {weight.shape}")
    Ci_w, Co, k = weight.shape[:3]
    if Ci_w != Ci:
        raise ConfigurationError(
            f"conv_transpose3d: input channels {Ci} != weight in-channels {Ci_w}"
        )
    if weight.shape[2:] != (k, k, k):
        raise ConfigurationError(f"conv_transpose3d: kernel must be cubic, got {weight.shape[2:]}")
    if stride < 1:
        raise ConfigurationError(f"conv_transpose3d: stride {stride} must be positive")
    if bias is not None and bias.shape != (Co,):
        raise ConfigurationError(f"conv_transpose3d: bias shape {bias.shape} != ({Co},)")

    out_sp = [(e - 1) * stride + k for e in spatial]
    xc = np.ascontiguousarray(np.moveaxis(xb.data, 1, 0))
    w = weight.data
    offsets = list(itertools.product(range(k), repeat=3))

    def window(arr, a, b, c):
        return arr[:, :,
                   a:a + stride * (spatial[0] - 1) + 1:stride,
                   b:b + stride * (spatial[1] - 1) + 1:stride,
                   c:c + stride * (spatial[2] - 1) + 1:stride]

    out = np.zeros((Co, B, *out_sp), dtype=xb.dtype)
    for a, b, c in offsets:
        window(out, a, b, c)[...] += np.tensordot(w[:, :, a, b, c].T, xc, axes=(1, 0))
    if bias is not None:
        out += bias.data.reshape(Co, 1, 1, 1, 1)

    def backward(g):
        gc = np.ascontiguousarray(np.moveaxis(g, 1, 0))
        if bias is not None and bias.requires_grad:
            _accum(bias, gc.sum(axis=(1, 2, 3, 4)))
        if weight.requires_grad:
            gw = np.zeros_like(w)
            for a, b, c in offsets:
                gw[:, :, a, b, c] = np.tensordot(xc, window(gc, a, b, c),
                                                 axes=([1, 2, 3, 4], [1, 2, 3, 4]))
            _accum(weight, gw)
        if xb.requires_grad:
            gx = np.zeros_like(xc)
            for a, b, c in offsets:
                gx += np.tensordot(w[:, :, a, b, c], window(gc, a, b, c), axes=(1, 0))
            _accum(xb, np.moveaxis(gx, 0, 1))

    params = (xb, weight) if bias is None else (xb, weight, bias)
    y = _make(np.ascontiguousarray(np.moveaxis(out, 0, 1)), params, backward)
    return _unbatch(y, squeeze)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
