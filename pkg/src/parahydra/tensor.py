"""Dense tensors with reverse-mode differentiation.

Every op is a :class:`Function` subclass with a numpy ``forward`` and a
``backward`` that maps the output gradient to one gradient per input.
Graphs are built eagerly; :meth:`Tensor.backward` walks them in reverse
topological order.
"""

from __future__ import annotations

import logging
import threading
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

ArrayLike = Union["Tensor", np.ndarray, float, int]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigError(ValueError):
    """Raised for invalid op configuration (kernel sizes, strides, ...)."""


# ---------------------------------------------------------------------------
# flop accounting
# ---------------------------------------------------------------------------

_active_counters: list["FlopCounter"] = []


class FlopCounter:
    """Accumulates multiply-add counts for ops executed inside a ``with`` block.

    Counts are kept per kind (``"matmul"``, ``"conv"``); ``total`` sums them.
    Nested counters all receive the counts.
    """

    def __init__(self) -> None:
        self.counts: dict[str, int] = {"matmul": 0, "conv": 0}

    def __enter__(self) -> "FlopCounter":
        _active_counters.append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        _active_counters.remove(self)

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(n)

    @property
    def matmul(self) -> int:
        return self.counts["matmul"]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _count(kind: str, n: int) -> None:
    for c in _active_counters:
        c.add(kind, n)


# ---------------------------------------------------------------------------
# grad mode
# ---------------------------------------------------------------------------

# Per thread, so that worker threads entering no_grad cannot leave another
# thread's (or the main thread's) grad mode switched off.
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that disables graph construction in the current thread."""

    def __enter__(self) -> None:
        self._prev = is_grad_enabled()
        _grad_state.enabled = False

    def __exit__(self, *exc: Any) -> None:
        _grad_state.enabled = self._prev


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_fn", "_parents", "name")
    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Any = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._fn: Optional[Function] = None
        self._parents: Tuple[Tensor, ...] = ()
        self.name = name

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate ``.grad`` on every ``requires_grad`` leaf reachable from self."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._fn is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            in_grads = node._fn.backward(g)
            for parent, pg in zip(node._parents, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -------------------------------------------------------
    def __add__(self, o: ArrayLike) -> "Tensor":
        return Add.apply(self, _t(o))

    __radd__ = __add__

    def __sub__(self, o: ArrayLike) -> "Tensor":
        return Sub.apply(self, _t(o))

    def __rsub__(self, o: ArrayLike) -> "Tensor":
        return Sub.apply(_t(o), self)

    def __mul__(self, o: ArrayLike) -> "Tensor":
        return Mul.apply(self, _t(o))

    __rmul__ = __mul__

    def __truediv__(self, o: ArrayLike) -> "Tensor":
        return Div.apply(self, _t(o))

    def __rtruediv__(self, o: ArrayLike) -> "Tensor":
        return Div.apply(_t(o), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, o: "Tensor") -> "Tensor":
        return batched_matmul(self, o)

    def __getitem__(self, idx: Any) -> "Tensor":
        return GetItem.apply(self, idx=idx)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def swap_last(self) -> "Tensor":
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(*axes)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)


def _t(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data: Any, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE))


def _topo_order(root: Tensor) -> list[Tensor]:
    """Deterministic post-order over the graph (parents in argument order)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[Tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if i < len(node._parents):
            stack.append((node, i + 1))
            p = node._parents[i]
            if p.requires_grad and id(p) not in seen:
                stack.append((p, 0))
        else:
            order.append(node)
    return order


# ---------------------------------------------------------------------------
# Function machinery
# ---------------------------------------------------------------------------


class Function:
    def __init__(self, **kwargs: Any) -> None:
        self.kwargs = kwargs

    def forward(self, *args: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        fn = cls(**kwargs)
        out = Tensor(fn.forward(*(t.data for t in inputs)))
        if is_grad_enabled() and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._fn = fn
            out._parents = inputs
        return out


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Add(Function):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a + b

    def backward(self, g):
        return unbroadcast(g, self.sa), unbroadcast(g, self.sb)


class Sub(Function):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a - b

    def backward(self, g):
        return unbroadcast(g, self.sa), unbroadcast(-g, self.sb)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return unbroadcast(g * self.b, self.a.shape), unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = unbroadcast(g / self.b, self.a.shape)
        gb = unbroadcast(-g * self.a / (self.b * self.b), self.b.shape)
        return ga, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Sum(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.sum(a, axis=self.kwargs["axis"], keepdims=self.kwargs["keepdims"])

    def backward(self, g):
        axis = self.kwargs["axis"]
        if axis is not None and not self.kwargs["keepdims"]:
            axes = tuple(ax % len(self.shape) for ax in np.atleast_1d(axis))
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a):
        self.shape = a.shape
        return a.reshape(self.kwargs["shape"])

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a):
        self.axes = self.kwargs["axes"]
        return np.transpose(a, self.axes)

    def backward(self, g):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


def _is_fancy(idx: Any) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


class GetItem(Function):
    def forward(self, a):
        self.shape = a.shape
        self.idx = self.kwargs["idx"]
        return a[self.idx]

    def backward(self, g):
        out = np.zeros(self.shape, dtype=g.dtype)
        if _is_fancy(self.idx):
            np.add.at(out, self.idx, g)
        else:
            out[self.idx] += g
        return (out,)


class Concat(Function):
    def forward(self, *arrs):
        axis = self.kwargs["axis"]
        self.sizes = [a.shape[axis] for a in arrs]
        return np.concatenate(arrs, axis=axis)

    def backward(self, g):
        axis = self.kwargs["axis"]
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis=axis)


class Scatter(Function):
    """Write ``a`` into a zero tensor of ``shape`` at index ``idx``."""

    def forward(self, a):
        out = np.zeros(self.kwargs["shape"], dtype=a.dtype)
        out[self.kwargs["idx"]] = a
        return out

    def backward(self, g):
        return (g[self.kwargs["idx"]],)


def scatter(t: Tensor, idx: Any, shape: Sequence[int]) -> Tensor:
    return Scatter.apply(t, idx=idx, shape=tuple(shape))


class Where(Function):
    """``where(mask, a, b)`` with a constant boolean mask; NaN in the
    unselected branch never reaches the output."""

    def forward(self, a, b):
        self.mask = self.kwargs["mask"]
        self.sa, self.sb = a.shape, b.shape
        return np.where(self.mask, a, b)

    def backward(self, g):
        ga = unbroadcast(np.where(self.mask, g, 0.0), self.sa)
        gb = unbroadcast(np.where(self.mask, 0.0, g), self.sb)
        return ga, gb


def where(mask: np.ndarray, a: ArrayLike, b: ArrayLike) -> Tensor:
    return Where.apply(_t(a), _t(b), mask=np.asarray(mask, dtype=bool))


class Pad(Function):
    def forward(self, a):
        self.pads = self.kwargs["pads"]
        return np.pad(a, self.pads)

    def backward(self, g):
        sl = tuple(slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(self.pads))
        return (g[sl],)


def pad(t: Tensor, pads: Sequence[Tuple[int, int]]) -> Tensor:
    return Pad.apply(t, pads=tuple(tuple(p) for p in pads))


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


class LeakyReLU(Function):
    def forward(self, a):
        self.pos = a > 0
        self.slope = self.kwargs["slope"]
        return np.where(self.pos, a, a * self.slope)

    def backward(self, g):
        return (np.where(self.pos, g, g * self.slope),)


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    return LeakyReLU.apply(t, slope=slope)


class Softplus(Function):
    def forward(self, a):
        self.a = a
        return np.logaddexp(0.0, a)

    def backward(self, g):
        return (g * special.expit(self.a),)


def softplus(t: Tensor) -> Tensor:
    return Softplus.apply(t)


class Sigmoid(Function):
    def forward(self, a):
        self.out = special.expit(a)
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


def sigmoid(t: Tensor) -> Tensor:
    return Sigmoid.apply(t)


class NormalCDF(Function):
    def forward(self, a):
        self.a = a
        return special.ndtr(a)

    def backward(self, g):
        return (g * np.exp(-0.5 * self.a * self.a) / np.sqrt(2.0 * np.pi),)


def normal_cdf(t: Tensor) -> Tensor:
    return NormalCDF.apply(t)


class Clamp(Function):
    """Clamp with gradient passed only where the input was inside the range."""

    def forward(self, a):
        lo, hi = self.kwargs["lo"], self.kwargs["hi"]
        self.inside = np.ones(a.shape, dtype=bool)
        if lo is not None:
            self.inside &= a >= lo
        if hi is not None:
            self.inside &= a <= hi
        return np.clip(a, lo, hi)

    def backward(self, g):
        return (np.where(self.inside, g, 0.0),)


def clamp(t: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    return Clamp.apply(t, lo=lo, hi=hi)


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


class RoundSTE(Function):
    def forward(self, a):
        return round_half_away(a)

    def backward(self, g):
        return (g,)


def round_ste(t: Tensor) -> Tensor:
    return RoundSTE.apply(t)


# ---------------------------------------------------------------------------
# matmul / softmax
# ---------------------------------------------------------------------------


class BatchedMatmul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        out = np.matmul(a, b)
        m, k = a.shape[-2], a.shape[-1]
        n = b.shape[-1]
        batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
        _count("matmul", batch * m * n * k)
        return out

    def backward(self, g):
        ga = np.matmul(g, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), g)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """``out[..., i, j] = sum_k a[..., i, k] * b[..., k, j]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"batched_matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(
                f"batched_matmul: batch dims differ {a.shape} and {b.shape}"
            ) from None
    return BatchedMatmul.apply(a, b)


class SoftmaxLast(Function):
    def forward(self, a):
        if np.isnan(a).any():
            raise FloatingPointError("softmax_lastdim: NaN in input")
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, g):
        s = self.out
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def softmax_lastdim(t: Tensor) -> Tensor:
    if t.ndim == 0 or t.shape[-1] < 1:
        raise ShapeError("softmax_lastdim: empty last dimension")
    return SoftmaxLast.apply(t)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """[B,C,Hp,Wp] -> strided view [B,C,ho,wo,kh,kw]."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int) -> np.ndarray:
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    ho, wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride, ho, wo)
    _count("conv", B * O * ho * wo * Cg * kh * kw)
    if groups == 1:
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,ho,wo,O
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if groups == C and Cg == 1 and O == C:
        return np.einsum("bchwij,cij->bchw", win, w[:, 0], optimize=True)
    og = O // groups
    wg = win.reshape(B, groups, Cg, ho, wo, kh, kw)
    wt = w.reshape(groups, og, Cg, kh, kw)
    out = np.einsum("bgchwij,gocij->bgohw", wg, wt, optimize=True)
    return out.reshape(B, O, ho, wo)


def _conv_wgrad(x: np.ndarray, g: np.ndarray, wshape: Tuple[int, ...], stride: int, pad: int, groups: int) -> np.ndarray:
    B, C, H, W = x.shape
    O, Cg, kh, kw = wshape
    ho, wo = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride, ho, wo)
    if groups == 1:
        return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    if groups == C and Cg == 1 and O == C:
        return np.einsum("bchw,bchwij->cij", g, win, optimize=True)[:, None]
    og = O // groups
    wg = win.reshape(B, groups, Cg, ho, wo, kh, kw)
    gg = g.reshape(B, groups, og, ho, wo)
    return np.einsum("bgohw,bgchwij->gocij", gg, wg, optimize=True).reshape(wshape)


def _conv_xgrad(g: np.ndarray, w: np.ndarray, xshape: Tuple[int, ...], stride: int, pad: int, groups: int) -> np.ndarray:
    """Adjoint of the convolution w.r.t. its input (scatter-add per kernel tap)."""
    B, C, H, W = xshape
    O, Cg, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    Hp, Wp = H + 2 * pad, W + 2 * pad
    full_h = max(Hp, (ho - 1) * stride + kh)
    full_w = max(Wp, (wo - 1) * stride + kw)
    buf = np.zeros((B, C, full_h, full_w), dtype=g.dtype)
    og = O // groups
    for p in range(kh):
        for q in range(kw):
            hs = slice(p, p + (ho - 1) * stride + 1, stride)
            ws = slice(q, q + (wo - 1) * stride + 1, stride)
            if groups == 1:
                contrib = np.tensordot(g, w[:, :, p, q], axes=([1], [0]))  # B,ho,wo,C
                buf[:, :, hs, ws] += contrib.transpose(0, 3, 1, 2)
            else:
                gg = g.reshape(B, groups, og, ho, wo)
                wt = w[:, :, p, q].reshape(groups, og, Cg)
                contrib = np.einsum("bgohw,goc->bgchw", gg, wt).reshape(B, C, ho, wo)
                buf[:, :, hs, ws] += contrib
    return buf[:, :, pad : pad + H, pad : pad + W]


class Conv2d(Function):
    def forward(self, x, w, *b):
        self.x, self.w = x, w
        s, p, gr = self.kwargs["stride"], self.kwargs["pad"], self.kwargs["groups"]
        out = _conv_fwd(x, w, s, p, gr)
        if b:
            out = out + b[0].reshape(1, -1, 1, 1)
        self.has_bias = bool(b)
        return out

    def backward(self, g):
        s, p, gr = self.kwargs["stride"], self.kwargs["pad"], self.kwargs["groups"]
        gx = _conv_xgrad(g, self.w, self.x.shape, s, p, gr)
        gw = _conv_wgrad(self.x, g, self.w.shape, s, p, gr)
        if self.has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of ``x`` [B,C,H,W] with ``w`` [O,C/groups,kh,kw]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if stride < 1 or pad < 0 or groups < 1:
        raise ConfigError(f"conv2d: bad stride={stride} pad={pad} groups={groups}")
    if C % groups or O % groups or Cg != C // groups:
        raise ShapeError(f"conv2d: channels {C} incompatible with weight {w.shape} (groups={groups})")
    if _out_size(H, kh, stride, pad) < 1 or _out_size(W, kw, stride, pad) < 1:
        raise ConfigError(f"conv2d: kernel {kh}x{kw} does not fit input {H}x{W} with pad {pad}")
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({O},)")
    args = (x, w) if b is None else (x, w, b)
    return Conv2d.apply(*args, stride=stride, pad=pad, groups=groups)


def deconv_out_size(n: int, k: int, stride: int, pad: int, output_padding: int) -> int:
    return (n - 1) * stride - 2 * pad + k + output_padding


class Deconv2d(Function):
    def forward(self, x, w, *b):
        self.x, self.w = x, w
        s, p, op = self.kwargs["stride"], self.kwargs["pad"], self.kwargs["output_padding"]
        B, Ci, H, W = x.shape
        _, Co, kh, kw = w.shape
        ho = deconv_out_size(H, kh, s, p, op)
        wo = deconv_out_size(W, kw, s, p, op)
        self.out_shape = (B, Co, ho, wo)
        _count("conv", B * Ci * H * W * Co * kh * kw)
        # deconv(x) is the input-gradient of conv(., w) evaluated at x
        out = _conv_xgrad(x, w, self.out_shape, s, p, 1)
        if b:
            out = out + b[0].reshape(1, -1, 1, 1)
        self.has_bias = bool(b)
        return out

    def backward(self, g):
        s, p = self.kwargs["stride"], self.kwargs["pad"]
        gx = _conv_fwd(g, self.w, s, p, 1)
        gw = _conv_wgrad(g, self.x, self.w.shape, s, p, 1)
        if self.has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw


def deconv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; ``w`` is [Cin, Cout, kh, kw].

    With matching parameters this is the exact adjoint of :func:`conv2d`.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"deconv2d: input channels {x.shape[1]} != weight {w.shape}")
    if stride < 1 or pad < 0 or not 0 <= output_padding < stride:
        raise ConfigError(f"deconv2d: bad stride={stride} pad={pad} output_padding={output_padding}")
    kh, kw = w.shape[2], w.shape[3]
    if deconv_out_size(x.shape[2], kh, stride, pad, output_padding) < 1 or deconv_out_size(
        x.shape[3], kw, stride, pad, output_padding
    ) < 1:
        raise ConfigError("deconv2d: negative output size")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"deconv2d: bias shape {b.shape} != ({w.shape[1]},)")
    args = (x, w) if b is None else (x, w, b)
    return Deconv2d.apply(*args, stride=stride, pad=pad, output_padding=output_padding)
