"""Small reverse-mode autodiff over float64 numpy arrays.

Every op builds a node holding its output, its parents and a closure that maps
the upstream gradient to one gradient per parent. ``Tensor.backward`` walks the
graph in reverse topological order. ``grad_check`` compares the analytic
gradients against central finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

TIE_TOL = 1e-4

_tie_log: list[list[str]] = []


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shape."""


@contextmanager
def record_ties() -> Iterator[list[str]]:
    """Collect the names of max-like ops evaluated near a tie."""
    events: list[str] = []
    _tie_log.append(events)
    try:
        yield events
    finally:
        _tie_log.pop()


def _note_tie(op: str) -> None:
    for events in _tie_log:
        events.append(op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str = "",
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], tuple] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self, upstream=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for trainable leaves."""
        if upstream is None:
            if self.data.size != 1:
                raise ValueError("backward() without upstream gradient needs a scalar output")
            upstream = np.ones_like(self.data)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != self.shape:
            raise ShapeError(f"upstream gradient shape {upstream.shape} != output shape {self.shape}")

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
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): upstream}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op) -> Tensor:
    return Tensor(data, _parents=tuple(parents), _backward=backward, op=op)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise binary ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), backward, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(out, (a,), backward, "pow")


def matmul(a, b) -> Tensor:
    """Batched matrix product following ``np.matmul`` broadcasting (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


# elementwise unary ----------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# reductions -----------------------------------------------------------------


def _axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _node(out, (a,), backward, "mean")


def max_(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max over one axis; the subgradient goes to the lowest index among ties."""
    a = as_tensor(a)
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise ShapeError("max: empty axis")
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if _tie_log and a.shape[axis] > 1:
        top2 = -np.partition(-a.data, 1, axis=axis).take([0, 1], axis=axis)
        if np.any(np.abs(top2.take(0, axis=axis) - top2.take(1, axis=axis)) <= TIE_TOL):
            _note_tie("max")
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, np.expand_dims(idx, axis), gg, axis=axis)
        return (grad,)

    return _node(out, (a,), backward, "max")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


# shape ----------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _node(a.data[index], (a,), backward, "getitem")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _node(out, parts, backward, "concat")


# convolution ----------------------------------------------------------------


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 'same' 2-D convolution (cross-correlation).

    x: (B, Cin, H, W); weight: (Cout, Cin, kh, kw) with odd kh, kw; bias: (Cout,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel sizes must be odd for 'same' padding")
    ph, pw = kh // 2, kw // 2
    _, _, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("bchwij,ocij->bohw", windows, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gw = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + H, j : j + W] += np.einsum("bohw,oc->bchw", g, weight.data[:, :, i, j])
        gx = gxp[:, :, ph : ph + H, pw : pw + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, parents, backward, "conv2d")


# graph evaluation and gradient checking ---------------------------------------


class Graph:
    """A function of named parameter tensors, evaluated forward then backward.

    ``fn(params, *inputs)`` must build its output from the tensors in ``params``.
    """

    def __init__(self, fn: Callable[..., Tensor], params: Mapping[str, Tensor]):
        self.fn = fn
        self.params = dict(params)
        self._output: Tensor | None = None

    def forward(self, *inputs) -> Tensor:
        self._output = self.fn(self.params, *inputs)
        return self._output

    def backward(self, upstream=None) -> dict[str, np.ndarray]:
        if self._output is None:
            raise RuntimeError("backward() called before forward()")
        for p in self.params.values():
            p.grad = None
        self._output.backward(upstream)
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
            if p.requires_grad
        }


@dataclass
class ParamCheck:
    name: str
    status: str  # "ok", "fail", "skipped", "tie"
    max_rel_error: float = 0.0


@dataclass
class GradCheckReport:
    checks: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        errs = [c.max_rel_error for c in self.checks if c.status in ("ok", "fail")]
        return max(errs, default=0.0)

    def by_name(self) -> dict[str, ParamCheck]:
        return {c.name: c for c in self.checks}


def grad_check(graph: Graph, *inputs, step: float = 1e-5, rel_tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central differences, element by element.

    The relative error of one element is |analytic - numeric| / max(|numeric|, 1e-8).
    Frozen tensors are skipped; if any max op was evaluated within ``TIE_TOL``
    of a tie, every trainable parameter is reported as ``"tie"``.
    """
    if not 0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    with record_ties() as ties:
        out = graph.forward(*inputs)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar loss, got shape {out.shape}")
    analytic = graph.backward()

    report = GradCheckReport()
    for name, p in graph.params.items():
        if not p.requires_grad:
            report.checks.append(ParamCheck(name, "skipped"))
            continue
        if ties:
            report.checks.append(ParamCheck(name, "tie"))
            continue
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(graph.forward(*inputs).data)
            flat[i] = orig - step
            f_minus = float(graph.forward(*inputs).data)
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2 * step)
        err = np.abs(analytic[name] - numeric) / np.maximum(np.abs(numeric), 1e-8)
        worst = float(err.max()) if err.size else 0.0
        report.checks.append(ParamCheck(name, "ok" if worst <= rel_tol else "fail", worst))
    return report
