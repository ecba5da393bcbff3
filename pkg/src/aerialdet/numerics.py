"""
Minimal reverse-mode differentiation on float64 NumPy arrays.

Every forward op records its parents and an explicit backward closure on the
output :class:`Tensor`. Calling :meth:`Tensor.backward` walks the recorded
graph in reverse topological order. There is no numerical differentiation
anywhere in this module except inside :func:`grad_check`, which exists to
verify the analytic derivatives.

Convolution-style ops (``conv2d``, ``resize_*``, ``max_pool2d``,
``global_avg_pool``) expect rank-4 ``(N, C, H, W)`` tensors. The elementwise
and linear-algebra ops accept any rank and follow NumPy broadcasting.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ConvSpec",
    "GradCheckError",
    "no_grad",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "expit",
    "sigmoid",
    "log_sigmoid",
    "relu",
    "minimum",
    "maximum",
    "matmul",
    "tensor_sum",
    "mean",
    "reshape",
    "transpose",
    "index",
    "concat",
    "concat_channels",
    "stack",
    "softmax",
    "conv2d",
    "resize_bilinear",
    "resize_nearest",
    "max_pool2d",
    "global_avg_pool",
    "grad_check",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """
    A float64 array plus the bookkeeping needed for reverse-mode gradients.

    Parameters
    ----------
    data : array_like
        Values; always copied and converted to ``float64``.
    requires_grad : bool
        Whether gradients should flow into this tensor. Leaf tensors with
        ``requires_grad=True`` accumulate into :attr:`grad` on backward.

    Notes
    -----
    ``data`` is marked read-only. Optimisers replace ``data`` wholesale
    instead of writing into it, so a tensor captured by a recorded graph never
    changes underneath the backward pass.
    """

    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    @classmethod
    def _result(cls, arr: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        out.data = arr
        out.grad = None
        out.op = op
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- array protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Propagate ``grad`` (default 1 for scalars) to every leaf upstream."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._result(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def expit(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """``log(sigmoid(a))`` without overflow for large ``|a|``."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return Tensor._result(out, (a,), lambda g: (g * expit(-x),), "log_sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return Tensor._result(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return Tensor._result(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape manipulation
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    s = tensor_sum(a, axis=axis, keepdims=keepdims)
    count = a.data.size // max(s.data.size, 1) if a.data.size else 1
    return s * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._result(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def index(a, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate on backward."""
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        raise TypeError("index with a Tensor is not supported; pass an ndarray")

    def backward(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(a.data[idx], (a,), backward, "index")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat needs at least one part")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis), parts, backward, "concat")


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return Tensor._result(np.stack([p.data for p in parts], axis=axis), parts, backward, "stack")


def softmax(logits, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    a = as_tensor(logits)
    if a.size == 0 or a.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (a,), backward, "softmax")


# ---------------------------------------------------------------------------
# image ops on (N, C, H, W)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution."""

    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        return (
            (h + 2 * self.padding - kh) // self.stride + 1,
            (w + 2 * self.padding - kw) // self.stride + 1,
        )


def _check_rank4(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")


def conv2d(input, weight, bias=None, spec: ConvSpec | None = None) -> Tensor:
    """
    Grouped 2-D cross-correlation with zero padding.

    ``weight`` has shape ``(C_out, C_in / groups, kh, kw)`` and ``bias`` length
    ``C_out`` (or ``None``). Both may be graph tensors, which is how the
    dynamically generated kernels receive gradients.
    """
    x, w = as_tensor(input), as_tensor(weight)
    _check_rank4(x, "conv2d input")
    _check_rank4(w, "conv2d weight")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if spec is None:
        spec = ConvSpec(kernel=(kh, kw))
    if spec.kernel != (kh, kw):
        raise ValueError(f"kernel size mismatch: spec {spec.kernel}, weight {(kh, kw)}")
    g = spec.groups
    if c % g:
        raise ValueError(f"input channels {c} not divisible by groups {g}")
    if o % g:
        raise ValueError(f"output channels {o} not divisible by groups {g}")
    if cg != c // g:
        raise ValueError(f"weight input-channel dimension is {cg}, expected C_in/groups = {c // g}")
    ho, wo = spec.output_size(h, wd)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {(kh, kw)} larger than padded input {(h, wd)}")
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (o,):
            raise ValueError(f"bias length {b.shape} does not match output channels {o}")

    s, p = spec.stride, spec.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # im2col: (N, C, kh, kw, Ho, Wo) -> (N, g, Cg*kh*kw, Ho*Wo)
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s]
    k = cg * kh * kw
    cols = cols.reshape(n, g, k, ho * wo)
    wg = w.data.reshape(g, o // g, k)
    out = np.matmul(wg, cols).reshape(n, o, ho, wo)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(grad):
        gg = grad.reshape(n, g, o // g, ho * wo)
        gw = np.matmul(gg, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w.shape)
        dcols = np.matmul(np.swapaxes(wg, -1, -2), gg).reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += dcols[:, :, i, j]
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        gb = grad.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._result(out, parents, backward, "conv2d")


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, source coordinate clamped to the valid range
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    src = np.minimum(np.floor(np.arange(n_out) * (n_in / n_out)).astype(int), n_in - 1)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), src] = 1.0
    return m


def _separable_resize(x: Tensor, my: np.ndarray, mx: np.ndarray, op: str) -> Tensor:
    out = np.einsum("ph,nchw,qw->ncpq", my, x.data, mx, optimize=True)

    def backward(g):
        return (np.einsum("ph,ncpq,qw->nchw", my, g, mx, optimize=True),)

    return Tensor._result(out, (x,), backward, op)


def _check_resize(x: Tensor, out_h: int, out_w: int) -> None:
    _check_rank4(x, "resize input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"cannot resize a zero-sized input {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {(out_h, out_w)}")


def resize_bilinear(input, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with the half-pixel-centre convention (no corner alignment)."""
    x = as_tensor(input)
    _check_resize(x, out_h, out_w)
    return _separable_resize(
        x, _bilinear_matrix(x.shape[2], out_h), _bilinear_matrix(x.shape[3], out_w), "resize_bilinear"
    )


def resize_nearest(input, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(input)
    _check_resize(x, out_h, out_w)
    return _separable_resize(
        x, _nearest_matrix(x.shape[2], out_h), _nearest_matrix(x.shape[3], out_w), "resize_nearest"
    )


def concat_channels(parts: Sequence) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis, preserving order."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_channels needs at least one part")
    for p in parts:
        _check_rank4(p, "concat_channels part")
    ref = parts[0].shape
    for i, p in enumerate(parts[1:], start=1):
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"part {i} has N,H,W {(p.shape[0], p.shape[2], p.shape[3])}, expected {(ref[0], ref[2], ref[3])}")
    return concat(parts, axis=1)


def max_pool2d(input, window: int, stride: int) -> Tensor:
    """Unpadded max pooling; ties route the gradient to the first maximum in row-major order."""
    x = as_tensor(input)
    _check_rank4(x, "max_pool2d input")
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"pooling window {window} larger than input {(h, w)}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros(x.shape)
        nn_, cc, hh, ww = np.indices((n, c, ho, wo))
        rows = hh * stride + arg // window
        cols = ww * stride + arg % window
        np.add.at(gx, (nn_, cc, rows, cols), g)
        return (gx,)

    return Tensor._result(out, (x,), backward, "max_pool2d")


def global_avg_pool(input) -> Tensor:
    """Spatial mean, keeping the ``(N, C, 1, 1)`` layout."""
    x = as_tensor(input)
    _check_rank4(x, "global_avg_pool input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"global_avg_pool needs H, W >= 1, got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


class GradCheckError(FloatingPointError):
    """Raised when a gradient check meets a non-finite value."""


def grad_check(
    op: Callable[..., Tensor],
    inputs: Iterable[Tensor],
    eps: float = 1e-6,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """
    Compare analytic gradients of ``op(*inputs)`` against central differences.

    The output is projected onto a fixed random direction so that the whole
    Jacobian is exercised, not just its column sums. Each input is perturbed
    in place (its ``data`` swapped) and restored afterwards, so ``op`` may
    also be a closure that ignores its arguments and reads module parameters.

    Parameters
    ----------
    op : callable
        Differentiable function of the input tensors.
    inputs : iterable of Tensor
        Tensors to differentiate with respect to.
    eps : float
        Central-difference step.
    max_elements : int, optional
        Check at most this many randomly chosen elements per input.
    seed : int
        Seed for the projection direction and element sampling.

    Returns
    -------
    float
        ``max |analytic - numeric| / max(1, |numeric|)`` over checked elements.

    Raises
    ------
    GradCheckError
        If the output, a perturbed output, or an analytic gradient is not finite.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        out = op(*inputs)
        if not np.all(np.isfinite(out.data)):
            raise GradCheckError(f"non-finite forward output in {out.op or 'op'}")
        proj = rng.standard_normal(out.shape)
        (out * proj).sum().backward()
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]
        for k, ga in enumerate(analytic):
            if not np.all(np.isfinite(ga)):
                raise GradCheckError(f"non-finite analytic gradient for input {k}")

        def value() -> float:
            with no_grad():
                v = float(np.sum(op(*inputs).data * proj))
            if not np.isfinite(v):
                raise GradCheckError("non-finite output under perturbation")
            return v

        worst = 0.0
        for t, ga in zip(inputs, analytic):
            base = t.data
            if max_elements is not None and t.size > max_elements:
                picks = rng.choice(t.size, size=max_elements, replace=False)
            else:
                picks = range(t.size)
            try:
                for i in picks:
                    bumped = base.copy()
                    bumped.flat[i] += eps
                    t.data = bumped
                    fp = value()
                    bumped = base.copy()
                    bumped.flat[i] -= eps
                    t.data = bumped
                    fm = value()
                    numeric = (fp - fm) / (2.0 * eps)
                    err = abs(ga.flat[i] - numeric) / max(1.0, abs(numeric))
                    worst = max(worst, err)
            finally:
                t.data = base
        return worst
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag
            t.grad = None
