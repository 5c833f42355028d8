"""Dense real tensors with reverse-mode automatic differentiation.

Every differentiable quantity in the package is a :class:`Tensor`: a numpy
array plus an optional node in an implicit gradient tape (the DAG of recorded
operations).  Design points that the rest of the code relies on:

* Gradients accumulate additively into ``Tensor.grad``; they are never zeroed
  implicitly.  Training code calls :func:`zero_grad` before each
  :func:`backward`, which keeps every optimization step auditable.
* Backward functions are written in terms of recorded tensor operations, so a
  gradient can itself be differentiated.  ``grad(..., create_graph=True)``
  enables the single nested level needed by gradient-norm penalties; with
  ``create_graph=False`` the sweep runs untraced and costs nothing extra.
* Broadcasting is supported where numpy supports it (bias-style trailing axes
  and size-1 axes); gradients of broadcast operands are sum-reduced back to
  the operand shape.  Incompatible shapes raise :class:`ShapeError` carrying
  both shapes.
* dtype follows the inputs: float64 is used by every verification test,
  float32 is allowed for training speed.  Tolerances quoted in the test suite
  are for float64.

Forward evaluation is deterministic.  Graph construction and backward sweeps
are single-threaded; forward evaluation with frozen weights may run
concurrently across batch shards.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "parameter",
    "constant",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "tensor_sum",
    "tensor_mean",
    "concat",
    "slice_axis",
    "pad_axis",
    "reshape",
    "transpose",
    "broadcast_to",
    "flip",
    "cumsum_exclusive",
    "matmul",
    "apply_activation",
    "sin",
    "cos",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "exp",
    "sqrt",
    "pow_scalar",
    "absolute",
    "im2col",
    "col2im",
    "conv2d",
    "upsample_nearest",
    "backward",
    "grad",
    "grad_check",
    "zero_grad",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context manager that suspends tape recording."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Node:
    """Tape entry: the producing operation and its parents."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """A dense n-dimensional real array, optionally on the gradient tape."""

    __slots__ = ("data", "grad", "node", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, node: Node | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node = node
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = " grad" if (self.node is not None or self.requires_grad) else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor division is only supported by scalars")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def parameter(data) -> Tensor:
    """A leaf tensor that participates in gradient accumulation."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def _tracked(t: Tensor) -> bool:
    return t.node is not None or t.requires_grad


def _trace(op: str, parents: tuple, data: np.ndarray, vjp: Callable) -> Tensor:
    if _grad_enabled and any(_tracked(p) for p in parents):
        return Tensor(data, node=Node(op, parents, vjp))
    return Tensor(data)


def _reduce_to(g: Tensor, shape: tuple) -> Tensor:
    """Sum-reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and g.shape[lead + i] != 1
    )
    if axes:
        g = tensor_sum(g, axis=axes)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


def _broadcast_data(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_data(a, b, "add")
    ta, tb = _tracked(a), _tracked(b)
    return _trace(
        "add", (a, b), a.data + b.data,
        lambda g: (_reduce_to(g, a.shape) if ta else None,
                   _reduce_to(g, b.shape) if tb else None),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_data(a, b, "sub")
    ta, tb = _tracked(a), _tracked(b)
    return _trace(
        "sub", (a, b), a.data - b.data,
        lambda g: (_reduce_to(g, a.shape) if ta else None,
                   _reduce_to(neg(g), b.shape) if tb else None),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_data(a, b, "mul")
    ta, tb = _tracked(a), _tracked(b)
    return _trace(
        "mul", (a, b), a.data * b.data,
        lambda g: (_reduce_to(mul(g, b), a.shape) if ta else None,
                   _reduce_to(mul(g, a), b.shape) if tb else None),
    )


def neg(a: Tensor) -> Tensor:
    return _trace("neg", (a,), -a.data, lambda g: (neg(g),))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (not differentiated w.r.t. the scalar)."""
    s = float(s)
    return _trace("scale", (a,), a.data * a.dtype.type(s), lambda g: (scale(g, s),))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None and not isinstance(axis, tuple):
        axis = (axis,)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g: Tensor):
        if axis is None:
            expanded = reshape(g, (1,) * a.ndim) if a.ndim else g
        elif keepdims:
            expanded = g
        else:
            kshape = list(a.shape)
            for ax in axis:
                kshape[ax] = 1
            expanded = reshape(g, tuple(kshape))
        return (broadcast_to(expanded, a.shape),)

    return _trace("sum", (a,), data, vjp)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    base = tensors[0].shape
    for t in tensors[1:]:
        off_a = t.shape[:axis] + t.shape[axis + 1:]
        off_b = base[:axis] + base[axis + 1:]
        if t.ndim != len(base) or off_a != off_b:
            raise ShapeError(
                f"concat: shapes {base} and {t.shape} differ off axis {axis}"
            )
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])
    tracked = tuple(_tracked(t) for t in tensors)

    def vjp(g: Tensor):
        return tuple(
            slice_axis(g, axis, int(offsets[i]), int(offsets[i + 1])) if tracked[i] else None
            for i in range(len(tensors))
        )

    return _trace("concat", tensors, data, vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = tuple(
        slice(start, stop) if i == axis else slice(None) for i in range(a.ndim)
    )
    extent = a.shape[axis]
    return _trace(
        "slice", (a,), a.data[index],
        lambda g: (pad_axis(g, axis, start, extent - stop),),
    )


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    data = np.pad(a.data, widths)
    extent = a.shape[axis]
    return _trace(
        "pad", (a,), data,
        lambda g: (slice_axis(g, axis, before, before + extent),),
    )


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _trace(
        "reshape", (a,), a.data.reshape(shape), lambda g: (reshape(g, old),)
    )


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _trace(
        "transpose", (a,), np.transpose(a.data, axes),
        lambda g: (transpose(g, inverse),),
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    old = a.shape
    return _trace(
        "broadcast", (a,), np.ascontiguousarray(data),
        lambda g: (_reduce_to(g, old),),
    )


def flip(a: Tensor, axis: int) -> Tensor:
    return _trace("flip", (a,), np.flip(a.data, axis), lambda g: (flip(g, axis),))


def cumsum_exclusive(a: Tensor, axis: int = -1) -> Tensor:
    """``out[..., j] = sum(a[..., k] for k < j)`` along ``axis``."""
    axis = axis % a.ndim
    inclusive = np.cumsum(a.data, axis=axis)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 0)
    index = tuple(
        slice(0, a.shape[i]) if i == axis else slice(None) for i in range(a.ndim)
    )
    data = np.pad(inclusive, pad)[index]
    return _trace(
        "cumsum_exclusive", (a,), data,
        lambda g: (flip(cumsum_exclusive(flip(g, axis), axis), axis),),
    )


# ---------------------------------------------------------------------------
# matrix product
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a[m, k] @ b[k, n]``."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} and {b.shape}")
    ta, tb = _tracked(a), _tracked(b)
    return _trace(
        "matmul", (a, b), a.data @ b.data,
        lambda g: (matmul(g, transpose(b)) if ta else None,
                   matmul(transpose(a), g) if tb else None),
    )


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sin(a: Tensor) -> Tensor:
    return _trace("sin", (a,), np.sin(a.data), lambda g: (mul(g, cos(a)),))


def cos(a: Tensor) -> Tensor:
    return _trace("cos", (a,), np.cos(a.data), lambda g: (neg(mul(g, sin(a))),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _trace(
        "sigmoid", (a,), data,
        lambda g: (mul(g, mul(out, sub(_wrap(1.0, out), out))),),
    )
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow for large |x|."""
    data = np.logaddexp(a.dtype.type(0), a.data)
    return _trace("softplus", (a,), data, lambda g: (mul(g, sigmoid(a)),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0, a.dtype.type(1), a.dtype.type(slope))
    return _trace(
        "leaky_relu", (a,), a.data * mask,
        lambda g: (mul(g, Tensor(mask)),),
    )


def exp(a: Tensor) -> Tensor:
    out = _trace("exp", (a,), np.exp(a.data), lambda g: (mul(g, out),))
    return out


def sqrt(a: Tensor) -> Tensor:
    return _trace(
        "sqrt", (a,), np.sqrt(a.data),
        lambda g: (mul(g, scale(pow_scalar(a, -0.5), 0.5)),),
    )


def pow_scalar(a: Tensor, p: float) -> Tensor:
    p = float(p)
    return _trace(
        "pow", (a,), a.data ** p,
        lambda g: (mul(g, scale(pow_scalar(a, p - 1.0), p)),),
    )


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _trace("abs", (a,), np.abs(a.data), lambda g: (mul(g, Tensor(sign)),))


_ACTIVATIONS = {
    "sin": sin,
    "cos": cos,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "leaky_relu": leaky_relu,
    "exp": exp,
}


def apply_activation(a: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch an elementwise activation by name."""
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# convolution machinery
# ---------------------------------------------------------------------------

def _conv_geometry(h: int, w: int, k: int, stride: int, pad: int):
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        raise ShapeError(
            f"conv2d: non-integral output extent for input {h}x{w}, "
            f"kernel {k}, stride {stride}, pad {pad}"
        )
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _im2col_data(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x.shape
    ho, wo = _conv_geometry(h, w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]          # (b, c, ho, wo, k, k)
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, b * ho * wo)
    return np.ascontiguousarray(cols)


def _col2im_data(cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x_shape
    ho, wo = _conv_geometry(h, w, k, stride, pad)
    g = cols.reshape(c, k, k, b, ho, wo)
    out = np.zeros((c, b, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += g[:, ki, kj]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def im2col(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    """Extract kxk patches of a (B, C, H, W) tensor as (C*k*k, B*Ho*Wo) columns."""
    shape = x.shape
    return _trace(
        "im2col", (x,), _im2col_data(x.data, k, stride, pad),
        lambda g: (col2im(g, shape, k, stride, pad),),
    )


def col2im(cols: Tensor, x_shape: tuple, k: int, stride: int, pad: int) -> Tensor:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the image grid."""
    return _trace(
        "col2im", (cols,), _col2im_data(cols.data, x_shape, k, stride, pad),
        lambda g: (im2col(g, k, stride, pad),),
    )


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution of (C, H, W) or (B, C, H, W) inputs with (Cout, Cin, k, k) weights."""
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: bad operand shapes {x.shape} and {w.shape}")
    b, c, h, _ = x.shape
    c_out, c_in, k, _ = w.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    ho, wo = _conv_geometry(h, x.shape[3], k, stride, pad)

    cols = im2col(x, k, stride, pad)                        # (ckk, b*ho*wo)
    out2 = matmul(reshape(w, (c_out, c * k * k)), cols)     # (c_out, b*ho*wo)
    out = transpose(reshape(out2, (c_out, b, ho, wo)), (1, 0, 2, 3))
    out = add(out, reshape(bias, (1, c_out, 1, 1)))
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel of a (C, H, W) or (B, C, H, W) tensor into a factor x factor block."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"upsample_nearest: factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    b, c, h, w = x.shape
    out = reshape(x, (b, c, h, 1, w, 1))
    out = broadcast_to(out, (b, c, h, factor, w, factor))
    out = reshape(out, (b, c, h * factor, w * factor))
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


# ---------------------------------------------------------------------------
# backward sweeps
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def _sweep(loss: Tensor, create_graph: bool) -> dict[int, tuple[Tensor, Tensor]]:
    """Reverse-topological accumulation; returns id -> (tensor, grad)."""
    order = _toposort(loss)
    grads: dict[int, tuple[Tensor, Tensor]] = {
        id(loss): (loss, Tensor(np.ones_like(loss.data)))
    }
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            entry = grads.get(id(t))
            if entry is None or t.node is None:
                continue
            g = entry[1]
            parent_grads = t.node.vjp(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = (p, pg if prev is None else add(prev[1], pg))
    return grads


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    ``loss`` must be a scalar on a live tape.  Gradients add onto whatever is
    already stored in ``.grad``; callers zero them explicitly (see
    :func:`zero_grad`).  Returns the map of touched leaves to the gradient
    contribution of this call.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        raise ValueError("backward: loss is detached from the tape")
    grads = _sweep(loss, create_graph=False)
    result: dict[Tensor, np.ndarray] = {}
    for t, g in grads.values():
        if t.requires_grad:
            contribution = g.data.reshape(t.shape)
            if t.grad is None:
                t.grad = contribution.copy()
            else:
                t.grad = t.grad + contribution
            result[t] = contribution
    return result


def grad(loss: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar loss w.r.t. ``inputs`` as tensors.

    With ``create_graph=True`` the returned tensors stay on the tape so that
    expressions of them (e.g. gradient norms) can be differentiated again.
    Inputs unreachable from the loss get zero gradients.
    """
    if loss.size != 1:
        raise ValueError(f"grad: loss must be scalar, got shape {loss.shape}")
    grads = _sweep(loss, create_graph=create_graph)
    out = []
    for t in inputs:
        entry = grads.get(id(t))
        if entry is None:
            out.append(Tensor(np.zeros_like(t.data)))
        else:
            g = entry[1]
            if g.shape != t.shape:
                g = reshape(g, t.shape)
            out.append(g if create_graph else g.detach())
    return out


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar loss from the current parameter values; it
    is called repeatedly while parameter entries are perturbed in place.  The
    relative error uses an absolute floor of 1e-8 in the denominator, so
    exactly-zero gradients compare cleanly.  Run at float64 for meaningful
    tolerances.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    for p in params:
        p.data = np.ascontiguousarray(p.data)
    zero_grad(params)
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi = f().item()
            flat[i] = saved - eps
            lo = f().item()
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * eps)
            a = ana.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
