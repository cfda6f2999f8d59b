"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: exactly the operator set a volumetric encoder-decoder
needs. Forward values are plain numpy arrays; each op that can influence a
tracked parameter records its inputs and a backward rule, and
``Tensor.backward()`` walks the recorded graph once in reverse topological
order. Elementwise ops accept equal shapes or a scalar paired with a
tensor; there is no other implicit broadcasting.

The three convolution primitives (window gather, scatter-add, kernel
reduction) are direct loops compiled with numba. Each output element is
reduced by a single thread in a fixed order and threads partition disjoint
outputs, so results are bitwise reproducible regardless of thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .errors import NonScalarRoot, OddExtent, ShapeMismatch

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "prelu",
    "sigmoid",
    "tensor_sum",
    "tensor_mean",
    "add_bias",
    "concat",
    "conv3d",
    "conv3d_down",
    "conv_transpose3d",
    "backward",
]


class Tensor:
    """An N-D float64 array, optionally tracked by the differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self._op}{flag})"


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out._op = op
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ (only scalar-with-tensor mixes)")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # scalar operand of a broadcast op collects the full sum
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")

    def backward_fn(go):
        return _reduce_to(go, a.data.shape), _reduce_to(go, b.data.shape)

    return _node(a.data + b.data, (a, b), backward_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")

    def backward_fn(go):
        return _reduce_to(go, a.data.shape), _reduce_to(-go, b.data.shape)

    return _node(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")

    def backward_fn(go):
        return _reduce_to(go * b.data, a.data.shape), _reduce_to(go * a.data, b.data.shape)

    return _node(a.data * b.data, (a, b), backward_fn, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "div")

    def backward_fn(go):
        ga = _reduce_to(go / b.data, a.data.shape)
        gb = _reduce_to(-go * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), backward_fn, "div")


def neg(a) -> Tensor:
    a = _coerce(a)

    def backward_fn(go):
        return (-go,)

    return _node(-a.data, (a,), backward_fn, "neg")


def relu(x) -> Tensor:
    x = _coerce(x)
    mask = x.data > 0  # subgradient at exactly 0 is 0

    def backward_fn(go):
        return (go * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), backward_fn, "relu")


def prelu(x, slope) -> Tensor:
    """Leaky rectifier with a learned scalar negative-side slope."""
    x, slope = _coerce(x), _coerce(slope)
    if slope.data.shape != ():
        raise ShapeMismatch(f"prelu slope must be scalar, got shape {slope.data.shape}")
    positive = x.data > 0

    def backward_fn(go):
        gx = go * np.where(positive, 1.0, slope.data)
        gs = np.asarray((go * np.where(positive, 0.0, x.data)).sum())
        return gx, gs

    return _node(np.where(positive, x.data, slope.data * x.data), (x, slope), backward_fn, "prelu")


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    # branch by sign so neither exp can overflow
    pos = x.data >= 0
    ex = np.exp(np.where(pos, -x.data, x.data))
    out_data = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))

    def backward_fn(go):
        return (go * out_data * (1.0 - out_data),)

    return _node(out_data, (x,), backward_fn, "sigmoid")


def tensor_sum(x) -> Tensor:
    x = _coerce(x)

    def backward_fn(go):
        return (np.full(x.data.shape, float(go)),)

    return _node(np.asarray(x.data.sum()), (x,), backward_fn, "sum")


def tensor_mean(x) -> Tensor:
    x = _coerce(x)
    n = x.data.size

    def backward_fn(go):
        return (np.full(x.data.shape, float(go) / n),)

    return _node(np.asarray(x.data.mean()), (x,), backward_fn, "mean")


def add_bias(x, bias) -> Tensor:
    """Add a per-channel bias (C,) to a feature map (N, C, D, H, W)."""
    x, bias = _coerce(x), _coerce(bias)
    if x.data.ndim != 5 or bias.data.shape != (x.data.shape[1],):
        raise ShapeMismatch(f"add_bias: map {x.data.shape} with bias {bias.data.shape}")

    def backward_fn(go):
        return go, go.sum(axis=(0, 2, 3, 4))

    return _node(x.data + bias.data.reshape(1, -1, 1, 1, 1), (x, bias), backward_fn, "add_bias")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = tuple(_coerce(t) for t in tensors)
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeMismatch("concat: rank mismatch")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(go):
        return tuple(np.ascontiguousarray(g) for g in np.split(go, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn, "concat")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ShapeMismatch(f"expected 3 values, got {v!r}")
    return t


@njit(parallel=True, fastmath=False, cache=True)
def _conv_gather(xp, k, sd, sh, sw, out):  # pragma: no cover - compiled
    """out[n,f,d,h,w] = sum_{c,a,b,e} k[f,c,a,b,e] * xp[n,c,d*sd+a,h*sh+b,w*sw+e]"""
    n_b, c_in, _, _, _ = xp.shape
    f_out, _, kd, kh, kw = k.shape
    _, _, d1, h1, w1 = out.shape
    for nf in prange(n_b * f_out):
        n = nf // f_out
        f = nf % f_out
        line = np.empty(w1)
        for d in range(d1):
            for h in range(h1):
                line[:] = 0.0
                for c in range(c_in):
                    for a in range(kd):
                        for b in range(kh):
                            row = xp[n, c, d * sd + a, h * sh + b]
                            for e in range(kw):
                                kv = k[f, c, a, b, e]
                                if sw == 1:
                                    for w in range(w1):
                                        line[w] += kv * row[w + e]
                                else:
                                    for w in range(w1):
                                        line[w] += kv * row[w * sw + e]
                out[n, f, d, h] = line


@njit(parallel=True, fastmath=False, cache=True)
def _conv_scatter(src, k, sd, sh, sw, dst):  # pragma: no cover - compiled
    """dst[n,c,d*sd+a,h*sh+b,w*sw+e] += src[n,f,d,h,w] * k[f,c,a,b,e]

    Threads own disjoint (n, c) slabs of dst, so the scatter-add is
    race-free and its accumulation order fixed.
    """
    n_b, f_in, d1, h1, w1 = src.shape
    _, c_out, kd, kh, kw = k.shape
    for nc in prange(n_b * c_out):
        n = nc // c_out
        c = nc % c_out
        for d in range(d1):
            for h in range(h1):
                for a in range(kd):
                    for b in range(kh):
                        drow = dst[n, c, d * sd + a, h * sh + b]
                        for f in range(f_in):
                            srow = src[n, f, d, h]
                            for e in range(kw):
                                kv = k[f, c, a, b, e]
                                if sw == 1:
                                    for w in range(w1):
                                        drow[w + e] += kv * srow[w]
                                else:
                                    for w in range(w1):
                                        drow[w * sw + e] += kv * srow[w]


@njit(parallel=True, fastmath=False, cache=True)
def _conv_kernel_grad(go, xp, sd, sh, sw, gk):  # pragma: no cover - compiled
    """gk[f,c,a,b,e] = sum_{n,d,h,w} go[n,f,d,h,w] * xp[n,c,d*sd+a,h*sh+b,w*sw+e]

    One pass over the data per (f, c) pair accumulates all kernel entries;
    four independent accumulators let the stride-1 inner loop vectorize
    while keeping a fixed, thread-count-independent summation order.
    """
    n_b, f_out, d1, h1, w1 = go.shape
    _, c_in, _, _, _ = xp.shape
    _, _, kd, kh, kw = gk.shape
    for fc in prange(f_out * c_in):
        f = fc // c_in
        c = fc % c_in
        acc = np.zeros((kd, kh, kw))
        for n in range(n_b):
            for d in range(d1):
                for h in range(h1):
                    grow = go[n, f, d, h]
                    for a in range(kd):
                        for b in range(kh):
                            xrow = xp[n, c, d * sd + a, h * sh + b]
                            for e in range(kw):
                                a0 = 0.0
                                a1 = 0.0
                                a2 = 0.0
                                a3 = 0.0
                                if sw == 1:
                                    w = 0
                                    while w + 3 < w1:
                                        a0 += grow[w] * xrow[w + e]
                                        a1 += grow[w + 1] * xrow[w + 1 + e]
                                        a2 += grow[w + 2] * xrow[w + 2 + e]
                                        a3 += grow[w + 3] * xrow[w + 3 + e]
                                        w += 4
                                    while w < w1:
                                        a0 += grow[w] * xrow[w + e]
                                        w += 1
                                else:
                                    for w in range(w1):
                                        a0 += grow[w] * xrow[w * sw + e]
                                acc[a, b, e] += (a0 + a1) + (a2 + a3)
        gk[f, c] = acc


def _gather(xp, kernel, stride, out_spatial):
    out = np.empty((xp.shape[0], kernel.shape[0], *out_spatial), dtype=np.float64)
    _conv_gather(np.ascontiguousarray(xp), np.ascontiguousarray(kernel), *stride, out)
    return out


def _scatter(src, kernel, stride, out_spatial):
    dst = np.zeros((src.shape[0], kernel.shape[1], *out_spatial), dtype=np.float64)
    _conv_scatter(np.ascontiguousarray(src), np.ascontiguousarray(kernel), *stride, dst)
    return dst


def _kernel_grad(go, xp, stride, kernel_shape):
    gk = np.empty(kernel_shape, dtype=np.float64)
    _conv_kernel_grad(np.ascontiguousarray(go), np.ascontiguousarray(xp), *stride, gk)
    return gk


def conv3d(x, k, stride=1, padding=0) -> Tensor:
    """3D cross-correlation of (N, C, D, H, W) with kernels (F, C, kd, kh, kw).

    Zero padding; output extent per axis is floor((n + 2p - k) / s) + 1.
    """
    x, k = _coerce(x), _coerce(k)
    stride = _triple(stride)
    padding = _triple(padding)
    if x.data.ndim != 5 or k.data.ndim != 5:
        raise ShapeMismatch(f"conv3d needs 5D input and kernel, got {x.data.shape} and {k.data.shape}")
    if x.data.shape[1] != k.data.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {x.data.shape[1]}, kernel {k.data.shape[1]}")
    if any(s < 1 for s in stride) or any(p < 0 for p in padding):
        raise ShapeMismatch(f"invalid stride {stride} or padding {padding}")
    for n_dim, p, kk in zip(x.data.shape[2:], padding, k.data.shape[2:]):
        if n_dim + 2 * p < kk:
            raise ShapeMismatch(f"spatial extent {n_dim} + 2*{p} smaller than kernel {kk}")

    pd, ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    out_spatial = tuple(
        (n_dim + 2 * p - kk) // s + 1
        for n_dim, p, kk, s in zip(x.data.shape[2:], padding, k.data.shape[2:], stride)
    )
    out = _gather(xp, k.data, stride, out_spatial)

    kernel_data = k.data
    x_shape = x.data.shape

    def backward_fn(go):
        gx_p = _scatter(go, kernel_data, stride, xp.shape[2:])
        gx = gx_p[:, :, pd : pd + x_shape[2], ph : ph + x_shape[3], pw : pw + x_shape[4]]
        gk = _kernel_grad(go, xp, stride, kernel_data.shape)
        return np.ascontiguousarray(gx), gk

    return _node(out, (x, k), backward_fn, "conv3d")


def conv3d_down(x, k) -> Tensor:
    """The V-style downsampling convolution: 2x2x2 kernel, stride 2, no padding.

    Halves every spatial extent exactly, so extents must be even.
    """
    x, k = _coerce(x), _coerce(k)
    if k.data.ndim != 5 or k.data.shape[2:] != (2, 2, 2):
        raise ShapeMismatch(f"downsampling kernel must be (F, C, 2, 2, 2), got {k.data.shape}")
    if x.data.ndim != 5:
        raise ShapeMismatch(f"conv3d_down needs 5D input, got {x.data.shape}")
    if any(s % 2 for s in x.data.shape[2:]):
        raise OddExtent(f"spatial extents {x.data.shape[2:]} must be even to halve")
    return conv3d(x, k, stride=2, padding=0)


def conv_transpose3d(x, k, stride=2) -> Tensor:
    """Transposed convolution: the linear adjoint of the strided convolution.

    Input (N, Ci, D, H, W) and kernel (Ci, Co, kd, kh, kw) produce
    (N, Co, s*(D-1)+kd, ...); with the 2x2x2/stride-2 pairing this exactly
    doubles every spatial extent.
    """
    x, k = _coerce(x), _coerce(k)
    stride = _triple(stride)
    if x.data.ndim != 5 or k.data.ndim != 5:
        raise ShapeMismatch(f"conv_transpose3d needs 5D input and kernel, got {x.data.shape} and {k.data.shape}")
    if x.data.shape[1] != k.data.shape[0]:
        raise ShapeMismatch(f"channel mismatch: input {x.data.shape[1]}, kernel {k.data.shape[0]}")
    if any(s < 1 for s in stride):
        raise ShapeMismatch(f"invalid stride {stride}")

    out_shape = tuple(s * (n - 1) + kk for n, s, kk in zip(x.data.shape[2:], stride, k.data.shape[2:]))
    # forward of the transpose is the input-grad scatter of the paired conv;
    # the (Ci, Co, ...) kernel layout already matches the scatter's contraction
    out = _scatter(x.data, k.data, stride, out_shape)

    k_data = k.data
    x_data = x.data
    in_spatial = x.data.shape[2:]

    def backward_fn(go):
        # gather go's strided windows; (Ci, Co) kernel layout fits the gather
        gx = _gather(go, k_data, stride, in_spatial)
        gk = _kernel_grad(x_data, go, stride, k_data.shape)
        return gx, gk

    return _node(out, (x, k), backward_fn, "conv_transpose3d")


def backward(root: Tensor):
    """Accumulate gradients of a scalar root into every tracked tensor.

    Visits each recorded node exactly once in reverse topological order.
    Repeated calls without ``zero_grad`` add into existing gradients.
    """
    if root.data.shape != ():
        raise NonScalarRoot(f"backward root must be scalar, got shape {root.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    pending: dict[int, np.ndarray] = {id(root): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.requires_grad:
            node.grad = grad if node.grad is None else node.grad + grad
        if node._backward_fn is None:
            continue
        for parent, pgrad in zip(node._parents, node._backward_fn(grad)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pgrad if key not in pending else pending[key] + pgrad
