"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a contiguous row-major numpy buffer (float32 for
training, float64 for gradient checking).  Operations build an implicit
DAG: every result records its input tensors and a vector-Jacobian
closure, and ``backward`` walks the graph in reverse topological order,
accumulating gradients into ``.grad`` of every node that requires them.

Only the operations the recognition head needs are provided; there is no
general broadcasting.  Spatial tensors are channels-first (C, H, W).
Every public operation validates that its result is finite and raises
``NotFiniteError`` otherwise instead of letting NaN/Inf propagate.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes (or dtypes) do not satisfy an operation's contract."""


class NotFiniteError(ArithmeticError):
    """A tensor value or gradient contains NaN or Inf."""


_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Immutable dense value plus an optional gradient slot.

    ``data`` is always a contiguous row-major ndarray of float32 or
    float64.  Tensors produced by operations keep references to their
    inputs (``_parents``) and a VJP closure (``_vjp``) used by
    ``backward``.  Leaf tensors created with ``requires_grad=True`` are
    the trainable parameters; ``.grad`` accumulates across backward
    calls until cleared.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None, *,
                 _parents=(), _vjp=None, op: str = "leaf"):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise NotFiniteError(f"non-finite values in result of '{op}'")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(_parents)
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op!r})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


def constant(data, dtype=None) -> Tensor:
    """Leaf tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False, dtype=dtype, op="const")


def parameter(data, dtype=None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype, op="param")


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          vjp: Callable[[np.ndarray], tuple], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, _parents=parents, _vjp=vjp, op=op)
    return Tensor(data, False, op=op)


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# ---------------------------------------------------------------------------
# elementwise and arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data), "mul")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a non-learnable Python scalar."""
    c = float(c)
    return _make(x.data * np.asarray(c, dtype=x.dtype), (x,),
                 lambda g: (g * np.asarray(c, dtype=x.dtype),), "scale")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x).  Subgradient at 0 is 0."""
    mask = x.data > 0
    return _make(np.where(mask, x.data, x.dtype.type(0)), (x,),
                 lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow for large |x|
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    y = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))
    s = _stable_sigmoid(x.data)
    return _make(y.astype(x.dtype), (x,), lambda g: (g * s,), "softplus")


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x| with subgradient 0 at 0."""
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "absolute")


# ---------------------------------------------------------------------------
# linear algebra and layout


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents {a.shape} x {b.shape} do not match")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expects a matrix, got {x.shape}")
    return _make(x.data.T, (x,), lambda g: (np.ascontiguousarray(g.T),), "transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: {x.shape} -> {shape} changes element count")
    old = x.shape
    return _make(x.data.reshape(shape), (x,),
                 lambda g: (g.reshape(old),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input list")
    _check_same_dtype("concat", *xs)
    if axis not in (0, 1):
        raise ShapeError(f"concat: unsupported axis {axis}")
    for t in xs[1:]:
        if t.data.ndim != xs[0].data.ndim:
            raise ShapeError("concat: rank mismatch")
        lhs = list(t.shape)
        rhs = list(xs[0].shape)
        del lhs[axis], rhs[axis]
        if lhs != rhs:
            raise ShapeError(f"concat: non-{axis} extents differ: {t.shape} vs {xs[0].shape}")
    sizes = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        if axis == 0:
            return tuple(np.ascontiguousarray(g[offsets[i]:offsets[i + 1]])
                         for i in range(len(xs)))
        return tuple(np.ascontiguousarray(g[:, offsets[i]:offsets[i + 1]])
                     for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), vjp, "concat")


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols: expects a matrix, got {x.shape}")
    if not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"slice_cols: range [{lo}, {hi}) outside {x.shape}")

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, lo:hi] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[:, lo:hi]), (x,), vjp, "slice_cols")


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m x n matrix."""
    _check_same_dtype("add_rowvec", x, v)
    if x.data.ndim != 2 or v.data.ndim != 1 or v.shape[0] != x.shape[1]:
        raise ShapeError(f"add_rowvec: {x.shape} + {v.shape}")
    return _make(x.data + v.data[None, :], (x, v),
                 lambda g: (g, g.sum(axis=0)), "add_rowvec")


# ---------------------------------------------------------------------------
# row-wise normalizations


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expects a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _make(y.astype(x.dtype), (x,), vjp, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean and unit variance (1/d), then affine."""
    _check_same_dtype("layer_norm", x, gain, bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expects a matrix, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs width {d}")
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xn = (x.data - mu) * inv

    def vjp(g):
        dgain = (g * xn).sum(axis=0)
        dbias = g.sum(axis=0)
        dxn = g * gain.data[None, :]
        dx = inv * (dxn - dxn.mean(axis=1, keepdims=True)
                    - xn * (dxn * xn).mean(axis=1, keepdims=True))
        return dx, dgain, dbias

    out = xn * gain.data[None, :] + bias.data[None, :]
    return _make(out.astype(x.dtype), (x, gain, bias), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# spatial ops (channels-first C x H x W)


def max_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Disjoint-window max pooling; window equals stride (H/out_h, W/out_w).

    Backward routes the gradient to the first maximal element of each
    window in row-major scan order.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool2d: expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    if out_h < 1 or out_w < 1 or h % out_h or w % out_w:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible into {out_h}x{out_w}")
    kh, kw = h // out_h, w // out_w
    # windows[c, oh, ow, :] lists each window in row-major scan order
    windows = x.data.reshape(c, out_h, kh, out_w, kw).transpose(0, 1, 3, 2, 4)
    windows = np.ascontiguousarray(windows).reshape(c, out_h, out_w, kh * kw)
    flat_arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, flat_arg[..., None], axis=3)[..., 0]

    def vjp(g):
        dwin = np.zeros((c, out_h, out_w, kh * kw), dtype=g.dtype)
        np.put_along_axis(dwin, flat_arg[..., None], g[..., None], axis=3)
        dx = dwin.reshape(c, out_h, out_w, kh, kw).transpose(0, 1, 3, 2, 4)
        return (np.ascontiguousarray(dx).reshape(c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), vjp, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extent of each channel: C x H x W -> C."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool: expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    area = x.dtype.type(h * w)

    def vjp(g):
        return (np.broadcast_to(g[:, None, None] / area, (c, h, w)).copy(),)

    return _make(x.data.mean(axis=(1, 2)), (x,), vjp, "global_avg_pool")


def scale_channels(x: Tensor, a: Tensor) -> Tensor:
    """Multiply channel c of a C x H x W tensor by scalar a[c]."""
    _check_same_dtype("scale_channels", x, a)
    if x.data.ndim != 3 or a.data.ndim != 1 or a.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_channels: {x.shape} vs gates {a.shape}")

    def vjp(g):
        return g * a.data[:, None, None], (g * x.data).sum(axis=(1, 2))

    return _make(x.data * a.data[:, None, None], (x, a), vjp, "scale_channels")


# ---------------------------------------------------------------------------
# reductions and indexing


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def vjp(g):
        return (np.full(shape, g, dtype=g.dtype),)

    return _make(x.data.sum(dtype=x.dtype), (x,), vjp, "sum_all")


def gather(x: Tensor, idx) -> Tensor:
    """Select entries of a vector by index array; backward scatter-adds."""
    if x.data.ndim != 1:
        raise ShapeError(f"gather: expects a vector, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather: index must be 1-d")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather: index out of range for {x.shape}")

    def vjp(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(dx, idx, g)
        return (dx,)

    return _make(x.data[idx], (x,), vjp, "gather")


def outer_sub(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise differences: out[j, k] = a[j] - b[k]."""
    _check_same_dtype("outer_sub", a, b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"outer_sub: expects vectors, got {a.shape}, {b.shape}")

    def vjp(g):
        return g.sum(axis=1), -g.sum(axis=0)

    return _make(a.data[:, None] - b.data[None, :], (a, b), vjp, "outer_sub")


def colmax(x: Tensor) -> Tensor:
    """Column-wise max of a matrix; gradient flows to the first maximal row."""
    if x.data.ndim != 2:
        raise ShapeError(f"colmax: expects a matrix, got {x.shape}")
    arg = x.data.argmax(axis=0)
    n = x.shape[1]

    def vjp(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[arg, np.arange(n)] = g
        return (dx,)

    return _make(x.data.max(axis=0), (x,), vjp, "colmax")


def var_cols(x: Tensor) -> Tensor:
    """Population variance (1/m) of each column of an m x n matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"var_cols: expects a matrix, got {x.shape}")
    m = x.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    centered = x.data - mu

    def vjp(g):
        return (g[None, :] * (2.0 / m) * centered,)

    return _make((centered ** 2).mean(axis=0), (x,), vjp, "var_cols")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    ``loss`` must be scalar-valued and connected to at least one tensor
    with ``requires_grad=True``.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is detached from every parameter")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NotFiniteError(f"non-finite gradient at '{node.op}'")
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
