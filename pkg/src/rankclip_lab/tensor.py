"""Minimal reverse-mode autodiff over dense numpy arrays.

Every operation is registered in ``OPS`` as a (forward, backward) pair. A
forward call whose inputs require grad attaches a ``Node`` to its output; the
graph reachable from a scalar loss is the computation record that
``backward`` replays once, in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


class RecordConsumedError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    attrs: dict[str, Any]
    saved: dict[str, Any] = field(default_factory=dict)
    consumed: bool = False


@dataclass(frozen=True)
class OpDef:
    forward: Callable[..., tuple[np.ndarray, dict]]
    backward: Callable[..., tuple[np.ndarray | None, ...]]


OPS: dict[str, OpDef] = {}


def register(name: str):
    def deco(cls):
        OPS[name] = OpDef(cls.forward, cls.backward)
        return cls

    return deco


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def op_forward(name: str, inputs, attrs: dict | None = None) -> Tensor:
    """Run operation ``name`` and record it when any input requires grad."""
    if name not in OPS:
        raise KeyError(f"unknown operation {name!r}")
    attrs = attrs or {}
    inputs = tuple(as_tensor(t) for t in inputs)
    out_data, saved = OPS[name].forward(name, [t.data for t in inputs], **attrs)
    out = Tensor.__new__(Tensor)
    out.data, out.requires_grad, out.grad, out.node = np.asarray(out_data), False, None, None
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(name, inputs, attrs, saved)
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for t in order:
        if t.node is not None and t.node.consumed:
            raise RecordConsumedError("computation record already consumed by a backward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        node = t.node
        in_grads = OPS[node.op].backward(
            g, [x.data for x in node.inputs], t.data, node.saved, **node.attrs
        )
        for x, gx in zip(node.inputs, in_grads):
            if gx is None or not x.requires_grad:
                continue
            if gx.shape != x.data.shape:
                raise ShapeError(
                    f"{node.op}: backward produced grad of shape {gx.shape} for input {x.shape}"
                )
            prev = grads.get(id(x))
            grads[id(x)] = gx if prev is None else prev + gx
        node.consumed = True
        node.saved = {}


# ---------------------------------------------------------------- helpers


def _bcast_check(name: str, a: np.ndarray, b: np.ndarray) -> None:
    """Allowed pairings: equal shapes, a size-1 operand, row vector vs matrix,
    column (N,1) vs (N,K)."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    big, small = (a, b) if a.ndim >= b.ndim else (b, a)
    if big.ndim == 2 and small.ndim == 1 and small.shape[0] == big.shape[1]:
        return
    if big.ndim == 2 and small.ndim == 2:
        if small.shape == (big.shape[0], 1) or small.shape == (1, big.shape[1]):
            return
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _require_2d(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.ndim != 2:
            raise ShapeError(f"{name}: expected a 2-D input, got shape {a.shape}")


# ---------------------------------------------------------------- operations


@register("matmul")
class _MatMul:
    @staticmethod
    def forward(name, xs):
        a, b = xs
        _require_2d(name, a, b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
        return a @ b, {}

    @staticmethod
    def backward(g, xs, out, saved):
        a, b = xs
        return g @ b.T, a.T @ g


@register("transpose")
class _Transpose:
    @staticmethod
    def forward(name, xs):
        _require_2d(name, xs[0])
        return xs[0].T.copy(), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g.T,)


@register("add")
class _Add:
    @staticmethod
    def forward(name, xs):
        _bcast_check(name, *xs)
        return xs[0] + xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved):
        return _unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)


@register("sub")
class _Sub:
    @staticmethod
    def forward(name, xs):
        _bcast_check(name, *xs)
        return xs[0] - xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved):
        return _unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)


@register("mul_elementwise")
class _Mul:
    @staticmethod
    def forward(name, xs):
        _bcast_check(name, *xs)
        return xs[0] * xs[1], {}

    @staticmethod
    def backward(g, xs, out, saved):
        a, b = xs
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("scalar_mul")
class _ScalarMul:
    @staticmethod
    def forward(name, xs, scalar):
        return xs[0] * scalar, {}

    @staticmethod
    def backward(g, xs, out, saved, scalar):
        return (g * scalar,)


@register("exp")
class _Exp:
    @staticmethod
    def forward(name, xs):
        return np.exp(xs[0]), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g * out,)


@register("log")
class _Log:
    @staticmethod
    def forward(name, xs):
        return np.log(xs[0]), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g / xs[0],)


@register("tanh")
class _Tanh:
    @staticmethod
    def forward(name, xs):
        return np.tanh(xs[0]), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g * (1.0 - out * out),)


@register("relu")
class _Relu:
    @staticmethod
    def forward(name, xs):
        return np.maximum(xs[0], 0.0), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g * (xs[0] > 0),)


@register("row_max")
class _RowMax:
    @staticmethod
    def forward(name, xs):
        _require_2d(name, xs[0])
        idx = np.argmax(xs[0], axis=1)
        vals = np.take_along_axis(xs[0], idx[:, None], axis=1)
        return vals, {"idx": idx}

    @staticmethod
    def backward(g, xs, out, saved):
        gx = np.zeros_like(xs[0])
        np.put_along_axis(gx, saved["idx"][:, None], g, axis=1)
        return (gx,)


@register("row_sum")
class _RowSum:
    @staticmethod
    def forward(name, xs):
        _require_2d(name, xs[0])
        return xs[0].sum(axis=1, keepdims=True), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (np.broadcast_to(g, xs[0].shape).copy(),)


@register("row_mean")
class _RowMean:
    @staticmethod
    def forward(name, xs):
        _require_2d(name, xs[0])
        return xs[0].mean(axis=1, keepdims=True), {}

    @staticmethod
    def backward(g, xs, out, saved):
        k = xs[0].shape[1]
        return (np.broadcast_to(g / k, xs[0].shape).copy(),)


@register("mean_all")
class _MeanAll:
    @staticmethod
    def forward(name, xs):
        if xs[0].size == 0:
            raise ShapeError("mean_all: empty input")
        return np.array(xs[0].mean()), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (np.full_like(xs[0], g / xs[0].size),)


@register("cumsum_last_axis")
class _Cumsum:
    @staticmethod
    def forward(name, xs):
        return np.cumsum(xs[0], axis=-1), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)


@register("flip_last_axis")
class _Flip:
    @staticmethod
    def forward(name, xs):
        return np.flip(xs[0], -1).copy(), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (np.flip(g, -1).copy(),)


@register("gather_last_axis")
class _Gather:
    @staticmethod
    def forward(name, xs, index):
        a = xs[0]
        _require_2d(name, a)
        index = np.asarray(index)
        if index.ndim != 2 or index.shape[0] != a.shape[0]:
            raise ShapeError(f"gather_last_axis: index shape {index.shape} does not fit {a.shape}")
        return np.take_along_axis(a, index, axis=1), {}

    @staticmethod
    def backward(g, xs, out, saved, index):
        gx = np.zeros_like(xs[0])
        if index.shape == xs[0].shape and _rows_are_permutations(index):
            np.put_along_axis(gx, index, g, axis=1)
            return (gx,)
        rows = np.arange(xs[0].shape[0])[:, None]
        np.add.at(gx, (np.broadcast_to(rows, index.shape), index), g)
        return (gx,)


def _rows_are_permutations(index: np.ndarray) -> bool:
    k = index.shape[1]
    return bool(np.all(np.sort(index, axis=1) == np.arange(k)))


@register("l2_normalize_rows")
class _L2Normalize:
    @staticmethod
    def forward(name, xs):
        a = xs[0]
        _require_2d(name, a)
        norms = np.sqrt(np.sum(a * a, axis=1, keepdims=True))
        if np.any(norms == 0.0):
            raise ValueError("l2_normalize_rows: zero-norm row")
        return a / norms, {"norms": norms}

    @staticmethod
    def backward(g, xs, out, saved):
        norms = saved["norms"]
        proj = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * proj) / norms,)


@register("logsumexp_row")
class _LogSumExpRow:
    @staticmethod
    def forward(name, xs):
        a = xs[0]
        _require_2d(name, a)
        m = a.max(axis=1, keepdims=True)
        return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)), {}

    @staticmethod
    def backward(g, xs, out, saved):
        return (g * np.exp(xs[0] - out),)


@register("clamp")
class _Clamp:
    @staticmethod
    def forward(name, xs, lo=None, hi=None):
        return np.clip(xs[0], lo, hi), {}

    @staticmethod
    def backward(g, xs, out, saved, lo=None, hi=None):
        x = xs[0]
        mask = np.ones_like(x, dtype=bool)
        if lo is not None:
            mask &= x >= lo
        if hi is not None:
            mask &= x <= hi
        return (g * mask,)


# ---------------------------------------------------------------- public API


def matmul(a, b) -> Tensor:
    return op_forward("matmul", (a, b))


def transpose(a) -> Tensor:
    return op_forward("transpose", (a,))


def add(a, b) -> Tensor:
    return op_forward("add", (a, b))


def sub(a, b) -> Tensor:
    return op_forward("sub", (a, b))


def mul(a, b) -> Tensor:
    return op_forward("mul_elementwise", (a, b))


def scalar_mul(a, scalar: float) -> Tensor:
    return op_forward("scalar_mul", (a,), {"scalar": float(scalar)})


def exp(a) -> Tensor:
    return op_forward("exp", (a,))


def log(a) -> Tensor:
    return op_forward("log", (a,))


def tanh(a) -> Tensor:
    return op_forward("tanh", (a,))


def relu(a) -> Tensor:
    return op_forward("relu", (a,))


def row_max(a) -> Tensor:
    return op_forward("row_max", (a,))


def row_sum(a) -> Tensor:
    return op_forward("row_sum", (a,))


def row_mean(a) -> Tensor:
    return op_forward("row_mean", (a,))


def mean_all(a) -> Tensor:
    return op_forward("mean_all", (a,))


def cumsum_last_axis(a) -> Tensor:
    return op_forward("cumsum_last_axis", (a,))


def flip_last_axis(a) -> Tensor:
    return op_forward("flip_last_axis", (a,))


def gather_last_axis(a, index) -> Tensor:
    return op_forward("gather_last_axis", (a,), {"index": np.asarray(index, dtype=np.intp)})


def l2_normalize_rows(a) -> Tensor:
    return op_forward("l2_normalize_rows", (a,))


def logsumexp_row(a) -> Tensor:
    return op_forward("logsumexp_row", (a,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    return op_forward("clamp", (a,), {"lo": lo, "hi": hi})


def sort_desc_stable(a) -> tuple[Tensor, np.ndarray]:
    """Sort each row descending; ties keep their original order.

    The returned indices are plain integers and carry no gradient; values are
    produced by a differentiable gather.
    """
    a = as_tensor(a)
    if a.data.ndim == 1:
        idx = np.argsort(-a.data, kind="stable")
        return Tensor(a.data[idx]), idx
    _require_2d("sort_desc_stable", a.data)
    idx = np.argsort(-a.data, axis=1, kind="stable")
    return gather_last_axis(a, idx), idx


# ---------------------------------------------------------------- gradcheck


def finite_diff_check(f: Callable[[Tensor], Tensor], x, epsilon: float = 1e-6) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and
    central differences, ``|a - n| / max(1e-12, |a| + |n|)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ShapeError(f"finite_diff_check: f must return a scalar, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += epsilon
        xm[i] -= epsilon
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2 * epsilon)

    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
