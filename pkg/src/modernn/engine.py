"""Reverse-mode autodiff over float64 numpy arrays.

A ``Tensor`` wraps an ndarray and, when ``requires_grad`` is set, remembers
the operation that produced it as a backward closure plus parent links.
``backward(loss)`` walks that graph once in reverse topological order and
accumulates ``.grad`` on every reachable differentiable tensor.

Only the operations the recurrent cell needs exist here, all deterministic,
all float64.  Broadcasting is limited to the scalar and per-channel cases
provided as explicit ops; everything else requires exact shape matches.
Convolutions (stride 1, zero same-padding, odd extents) are delegated to
the kernel backends in ``modernn.kernels``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

__all__ = [
    "Tensor", "constant", "parameter", "backward",
    "add", "sub", "mul_elementwise", "scale", "exp_op",
    "sigmoid", "tanh_op", "relu", "softmax_lastdim",
    "matmul", "transpose_last2", "linear",
    "conv2d", "depthwise_conv2d", "depthwise_separable_conv2d",
    "global_avg_pool", "concat_channels", "split_channels", "slice_channels",
    "reshape", "space_to_depth", "depth_to_space",
    "sum_all", "mean_all", "mul_channelwise", "expand_channel_vector",
]


class Tensor:
    """Immutable-by-convention float64 array, optionally on the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _out(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    t = Tensor(data)
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward_fn
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.ascontiguousarray(g)
    else:
        t.grad = t.grad + g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into every reachable leaf.

    Tensors not reachable from ``loss`` keep ``grad=None``, which readers
    treat as zero.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order walk; sequence graphs are deep enough to blow the
    # recursion limit.
    order: list[Tensor] = []
    seen: set[Tensor] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node in seen:
            continue
        seen.add(node)
        stack.append((node, True))
        for p in node._parents:
            if p not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _out(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _out(a.data - b.data, (a, b), bw)


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul_elementwise")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _out(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _out(a.data * s, (a,), bw)


def exp_op(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _out(y, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-safe for any input and cheaper than a two-branch exp
    y = 0.5 * np.tanh(0.5 * a.data) + 0.5

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _out(y, (a,), bw)


def tanh_op(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _out(y, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _out(np.where(mask, a.data, 0.0), (a,), bw)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - inner))

    return _out(y, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D operands or 3-D with a shared leading batch axis."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def bw(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _out(a.data @ b.data, (a, b), bw)


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError("transpose_last2 needs rank >= 2")

    def bw(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _out(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), (a,), bw)


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x[B,Din] @ w[Dout,Din]^T + bias[Dout]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} x {w.shape}")
    if bias.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({w.shape[0]},)")

    def bw(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        _accum(bias, g.sum(axis=0))

    return _out(x.data @ w.data.T + bias.data, (x, w, bias), bw)


# ---------------------------------------------------------------------------
# convolutions (stride 1, zero same-padding)


def _check_conv(x: Tensor, k: Tensor) -> None:
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {k.shape[2:]}")


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None) -> Tensor:
    _check_conv(x, k)
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel channels {k.shape[1]}")
    kh, kw = k.shape[2], k.shape[3]
    y = kernels.conv2d_fwd(x.data, k.data, None if bias is None else bias.data)
    parents = (x, k) if bias is None else (x, k, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        _accum(x, kernels.conv2d_bwd_input(g, k.data))
        _accum(k, kernels.conv2d_bwd_kernel(g, x.data, kh, kw))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    return _out(y, parents, bw)


def depthwise_conv2d(x: Tensor, k: Tensor) -> Tensor:
    _check_conv(x, k)
    if k.shape[1] != 1 or x.shape[1] != k.shape[0]:
        raise ShapeError(f"depthwise_conv2d: kernel {k.shape} does not match input {x.shape}")
    kh, kw = k.shape[2], k.shape[3]

    def bw(g):
        g = np.ascontiguousarray(g)
        _accum(x, kernels.dwconv2d_bwd_input(g, k.data))
        _accum(k, kernels.dwconv2d_bwd_kernel(g, x.data, kh, kw))

    return _out(kernels.dwconv2d_fwd(x.data, k.data), (x, k), bw)


def depthwise_separable_conv2d(x: Tensor, depthwise_k: Tensor, pointwise_k: Tensor) -> Tensor:
    """Per-channel 3x3 (or any odd) filter followed by a 1x1 channel mix."""
    if pointwise_k.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise kernel must be 1x1, got {pointwise_k.shape}")
    return conv2d(depthwise_conv2d(x, depthwise_k), pointwise_k)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool expects [B,C,H,W]")
    h, w = x.shape[2], x.shape[3]

    def bw(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))

    return _out(x.data.mean(axis=(2, 3)), (x,), bw)


# ---------------------------------------------------------------------------
# shape plumbing


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat_channels of nothing")
    base = (xs[0].shape[0],) + xs[0].shape[2:]
    for t in xs:
        if (t.shape[0],) + t.shape[2:] != base:
            raise ShapeError("concat_channels: non-channel extents differ")
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _accum(t, g[:, lo:hi])

    return _out(np.concatenate([t.data for t in xs], axis=1), tuple(xs), bw)


def _slice_bw(x: Tensor, lo: int, hi: int):
    def bw(g):
        gx = np.zeros_like(x.data)
        gx[:, lo:hi] = g
        _accum(x, gx)

    return bw


def split_channels(x: Tensor, n: int) -> list[Tensor]:
    c = x.shape[1]
    if c % n != 0:
        raise ShapeError(f"split_channels: {c} channels not divisible by {n}")
    step = c // n
    return [
        _out(np.ascontiguousarray(x.data[:, i * step:(i + 1) * step]), (x,),
             _slice_bw(x, i * step, (i + 1) * step))
        for i in range(n)
    ]


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"slice_channels: [{lo}:{hi}] out of range for C={x.shape[1]}")
    return _out(np.ascontiguousarray(x.data[:, lo:hi]), (x,), _slice_bw(x, lo, hi))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def bw(g):
        _accum(x, g.reshape(old))

    return _out(x.data.reshape(shape), (x,), bw)


def _s2d(a: np.ndarray, p: int) -> np.ndarray:
    b, c, h, w = a.shape
    a = a.reshape(b, c, h // p, p, w // p, p)
    return np.ascontiguousarray(a.transpose(0, 1, 3, 5, 2, 4)).reshape(b, c * p * p, h // p, w // p)


def _d2s(a: np.ndarray, p: int) -> np.ndarray:
    b, c, h, w = a.shape
    a = a.reshape(b, c // (p * p), p, p, h, w)
    return np.ascontiguousarray(a.transpose(0, 1, 4, 2, 5, 3)).reshape(b, c // (p * p), h * p, w * p)


def space_to_depth(x: Tensor, p: int) -> Tensor:
    b, c, h, w = x.shape
    if h % p or w % p:
        raise ShapeError(f"space_to_depth: {h}x{w} not divisible by patch {p}")

    def bw(g):
        _accum(x, _d2s(g, p))

    return _out(_s2d(x.data, p), (x,), bw)


def depth_to_space(x: Tensor, p: int) -> Tensor:
    b, c, h, w = x.shape
    if c % (p * p):
        raise ShapeError(f"depth_to_space: {c} channels not divisible by {p * p}")

    def bw(g):
        _accum(x, _s2d(g, p))

    return _out(_d2s(x.data, p), (x,), bw)


# ---------------------------------------------------------------------------
# reductions and per-channel broadcasts


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _out(np.asarray(x.data.sum()), (x,), bw)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def mul_channelwise(x: Tensor, s: Tensor) -> Tensor:
    """x[B,C,H,W] * s[B,C], the weight vector broadcast over space."""
    if x.data.ndim != 4 or s.shape != x.shape[:2]:
        raise ShapeError(f"mul_channelwise: {x.shape} vs {s.shape}")

    def bw(g):
        _accum(x, g * s.data[:, :, None, None])
        _accum(s, (g * x.data).sum(axis=(2, 3)))

    return _out(x.data * s.data[:, :, None, None], (x, s), bw)


def expand_channel_vector(v: Tensor, b: int, h: int, w: int) -> Tensor:
    """v[C] broadcast to [B,C,H,W]; gradient sums back over batch and space."""
    if v.data.ndim != 1:
        raise ShapeError("expand_channel_vector expects a 1-D tensor")

    def bw(g):
        _accum(v, g.sum(axis=(0, 2, 3)))

    return _out(np.broadcast_to(v.data[None, :, None, None], (b, v.shape[0], h, w)).copy(), (v,), bw)
