"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive application on a tensor that requires gradients records a
node carrying a global sequence number. ``backward`` collects the nodes that
lead to the loss into a :class:`Tape`, sorted by that number, and replays them
in exact reverse insertion order.

Only one broadcasting pattern is supported: adding a row vector to every row
of a matrix (``broadcast_add_row``). Scalars are expanded explicitly through
``matmul`` with constant ones (see :func:`expand_scalar`).
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "ShapeError",
    "NumericalError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "grad_check",
    "numeric_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "tanh",
    "relu",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "split",
    "concat",
    "broadcast_add_row",
    "constant",
    "ones_like",
    "softplus",
    "expand_scalar",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NumericalError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""

    def __init__(self, message: str, *, term: str | None = None, step: int | None = None,
                 index: int | None = None):
        super().__init__(message)
        self.term = term
        self.step = step
        self.index = index


_uid = itertools.count()
_seq = itertools.count()


class Tensor:
    """A dense row-major float64 array that may participate in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_uid", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None
        self._uid = next(_uid)

    @classmethod
    def _from_op(cls, data: np.ndarray, node: Node | None) -> Tensor:
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = node is not None
        t.grad = None
        t.name = None
        t._node = node
        t._uid = next(_uid)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants are only accepted where a primitive exists
    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(eq=False)
class Node:
    """One recorded primitive application."""

    op: str
    inputs: tuple[Tensor, ...]
    out_uids: tuple[int, ...]
    out_shapes: tuple[tuple[int, ...], ...]
    saved: tuple
    attrs: dict
    seq: int = field(default_factory=lambda: next(_seq))


@dataclass
class Tape:
    """Nodes reachable from an output, in insertion (topological) order."""

    nodes: list[Node]

    @classmethod
    def trace(cls, output: Tensor) -> Tape:
        seen: dict[int, Node] = {}
        stack = [output._node] if output._node is not None else []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen[id(node)] = node
            for t in node.inputs:
                if t._node is not None and id(t._node) not in seen:
                    stack.append(t._node)
        return cls(sorted(seen.values(), key=lambda n: n.seq))

    def __len__(self) -> int:
        return len(self.nodes)


# ---------------------------------------------------------------------------
# primitive table: op id -> (forward, backward)
#
# forward(arrays, **attrs) -> (outputs tuple, saved tuple)
# backward(out_grads, arrays, saved, **attrs) -> input grads (None = no grad)


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _f_add(xs):
    _same_shape("add", *xs)
    return (xs[0] + xs[1],), ()


def _b_add(gs, xs, saved):
    return gs[0], gs[0]


def _f_sub(xs):
    _same_shape("sub", *xs)
    return (xs[0] - xs[1],), ()


def _b_sub(gs, xs, saved):
    return gs[0], -gs[0]


def _f_mul(xs):
    _same_shape("mul", *xs)
    return (xs[0] * xs[1],), ()


def _b_mul(gs, xs, saved):
    return gs[0] * xs[1], gs[0] * xs[0]


def _f_scale(xs, c):
    return (xs[0] * c,), ()


def _b_scale(gs, xs, saved, c):
    return (gs[0] * c,)


def _f_matmul(xs):
    a, b = xs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    return (a @ b,), ()


def _b_matmul(gs, xs, saved):
    a, b = xs
    return gs[0] @ b.T, a.T @ gs[0]


def _f_tanh(xs):
    y = np.tanh(xs[0])
    return (y,), (y,)


def _b_tanh(gs, xs, saved):
    (y,) = saved
    return (gs[0] * (1.0 - y * y),)


def _f_relu(xs):
    return (np.maximum(xs[0], 0.0),), ()


def _b_relu(gs, xs, saved):
    return (gs[0] * (xs[0] > 0.0),)


def _f_exp(xs):
    y = np.exp(xs[0])
    return (y,), (y,)


def _b_exp(gs, xs, saved):
    return (gs[0] * saved[0],)


def _f_log(xs):
    x = xs[0]
    if not np.all(x > 0.0):
        bad = x[~(x > 0.0)].reshape(-1)[0]
        raise ValueError(f"log: non-positive input (found {bad!r})")
    return (np.log(x),), ()


def _b_log(gs, xs, saved):
    return (gs[0] / xs[0],)


def _f_square(xs):
    return (xs[0] * xs[0],), ()


def _b_square(gs, xs, saved):
    return (2.0 * xs[0] * gs[0],)


def _check_axis(op: str, x: np.ndarray, axis):
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")


def _f_sum(xs, axis=None):
    _check_axis("sum", xs[0], axis)
    return (np.asarray(np.sum(xs[0], axis=axis), dtype=np.float64),), ()


def _b_sum(gs, xs, saved, axis=None):
    g = gs[0] if axis is None else np.expand_dims(gs[0], axis)
    return (np.broadcast_to(g, xs[0].shape).copy(),)


def _f_mean(xs, axis=None):
    _check_axis("mean", xs[0], axis)
    return (np.asarray(np.mean(xs[0], axis=axis), dtype=np.float64),), ()


def _b_mean(gs, xs, saved, axis=None):
    x = xs[0]
    count = x.size if axis is None else x.shape[axis]
    g = gs[0] if axis is None else np.expand_dims(gs[0], axis)
    return (np.broadcast_to(g / count, x.shape).copy(),)


def _f_split(xs, at, axis=-1):
    x = xs[0]
    _check_axis("split", x, axis)
    if not 0 < at < x.shape[axis]:
        raise ShapeError(f"split: index {at} not inside extent {x.shape[axis]} of {x.shape}")
    a, b = np.split(x, [at], axis=axis)
    return (a.copy(), b.copy()), ()


def _b_split(gs, xs, saved, at, axis=-1):
    return (np.concatenate(gs, axis=axis),)


def _f_concat(xs, axis=-1):
    first = xs[0]
    _check_axis("concat", first, axis)
    for other in xs[1:]:
        rest_a = [n for i, n in enumerate(first.shape) if i != axis % first.ndim]
        rest_b = [n for i, n in enumerate(other.shape) if i != axis % max(other.ndim, 1)]
        if other.ndim != first.ndim or rest_a != rest_b:
            raise ShapeError(f"concat: shape mismatch {first.shape} vs {other.shape}")
    return (np.concatenate(xs, axis=axis),), ()


def _b_concat(gs, xs, saved, axis=-1):
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(gs[0], cuts, axis=axis))


def _f_broadcast_add_row(xs):
    m, r = xs
    if m.ndim != 2 or r.ndim != 1 or m.shape[1] != r.shape[0]:
        raise ShapeError(f"broadcast-add-row: shape mismatch {m.shape} vs {r.shape}")
    return (m + r,), ()


def _b_broadcast_add_row(gs, xs, saved):
    return gs[0], gs[0].sum(axis=0)


PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "add": (_f_add, _b_add),
    "sub": (_f_sub, _b_sub),
    "mul": (_f_mul, _b_mul),
    "scale": (_f_scale, _b_scale),
    "matmul": (_f_matmul, _b_matmul),
    "tanh": (_f_tanh, _b_tanh),
    "relu": (_f_relu, _b_relu),
    "exp": (_f_exp, _b_exp),
    "log": (_f_log, _b_log),
    "square": (_f_square, _b_square),
    "sum": (_f_sum, _b_sum),
    "mean": (_f_mean, _b_mean),
    "split": (_f_split, _b_split),
    "concat": (_f_concat, _b_concat),
    "broadcast-add-row": (_f_broadcast_add_row, _b_broadcast_add_row),
}


def apply_primitive(op: str, inputs: Sequence[Tensor], **attrs) -> Tensor | tuple[Tensor, ...]:
    """Evaluate primitive ``op`` and record it when any input needs gradients.

    Returns a single tensor, or a tuple for multi-output ops (``split``).
    """
    try:
        fwd, _ = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    for t in inputs:
        if not isinstance(t, Tensor):
            raise TypeError(f"{op}: inputs must be Tensor, got {type(t).__name__}")
    arrays = [t.data for t in inputs]
    outs, saved = fwd(arrays, **attrs)
    node = None
    if any(t.requires_grad for t in inputs):
        node = Node(op, tuple(inputs), (), tuple(o.shape for o in outs), saved, attrs)
    results = tuple(Tensor._from_op(o, node) for o in outs)
    if node is not None:
        node.out_uids = tuple(r._uid for r in results)
    return results if len(results) > 1 else results[0]


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Gradients are accumulated into ``.grad`` of leaf tensors (call
    ``zero_grad`` between steps) and assigned to intermediate tensors.
    Returns a map from every reached ``requires_grad`` tensor to its gradient.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must have shape [] or [1], got {list(loss.shape)}")
    tape = Tape.trace(loss)
    grads: dict[int, np.ndarray] = {loss._uid: np.ones_like(loss.data)}
    reached: dict[int, Tensor] = {loss._uid: loss} if loss.requires_grad else {}
    for node in reversed(tape.nodes):
        out_grads = [grads.pop(uid, None) for uid in node.out_uids]
        if all(g is None for g in out_grads):
            continue
        out_grads = [np.zeros(s) if g is None else g for g, s in zip(out_grads, node.out_shapes)]
        _, bwd = PRIMITIVES[node.op]
        in_grads = bwd(out_grads, [t.data for t in node.inputs], node.saved, **node.attrs)
        for t, g in zip(node.inputs, in_grads):
            if not t.requires_grad:
                continue
            reached[t._uid] = t
            if t._uid in grads:
                grads[t._uid] = grads[t._uid] + g
            else:
                grads[t._uid] = np.array(g, dtype=np.float64)
    if loss._node is None and loss.requires_grad:
        grads.setdefault(loss._uid, np.ones_like(loss.data))

    result: dict[Tensor, np.ndarray] = {}
    for uid, t in reached.items():
        g = grads.get(uid)
        if g is None:
            g = np.zeros_like(t.data)
        if t._node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
        else:
            t.grad = g
        result[t] = g
    return result


# ---------------------------------------------------------------------------
# primitive wrappers


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("mul", [a, b])


def scale(a: Tensor, c: float) -> Tensor:
    return apply_primitive("scale", [a], c=float(c))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def tanh(a: Tensor) -> Tensor:
    return apply_primitive("tanh", [a])


def relu(a: Tensor) -> Tensor:
    return apply_primitive("relu", [a])


def exp(a: Tensor) -> Tensor:
    return apply_primitive("exp", [a])


def log(a: Tensor) -> Tensor:
    return apply_primitive("log", [a])


def square(a: Tensor) -> Tensor:
    return apply_primitive("square", [a])


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    return apply_primitive("sum", [a], axis=axis)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    return apply_primitive("mean", [a], axis=axis)


def split(a: Tensor, at: int, axis: int = -1) -> tuple[Tensor, Tensor]:
    return apply_primitive("split", [a], at=int(at), axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    return apply_primitive("concat", list(tensors), axis=axis)


def broadcast_add_row(m: Tensor, row: Tensor) -> Tensor:
    return apply_primitive("broadcast-add-row", [m, row])


# ---------------------------------------------------------------------------
# composites built only from primitives


def constant(value: float, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float64))


def ones_like(t: Tensor) -> Tensor:
    return constant(1.0, t.shape)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)); overflows for a > ~709."""
    return log(add(exp(a), ones_like(a)))


def expand_scalar(s: Tensor, rows: int, cols: int) -> Tensor:
    """Broadcast a (1, 1) tensor to (rows, cols) through two constant matmuls."""
    if s.shape != (1, 1):
        raise ShapeError(f"expand_scalar: expected shape (1, 1), got {s.shape}")
    col = matmul(constant(1.0, (rows, 1)), s)
    if cols == 1:
        return col
    return matmul(col, constant(1.0, (1, cols)))


# ---------------------------------------------------------------------------
# finite differences


def numeric_grad(fn: Callable[[Tensor], Tensor], point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``point``."""
    x = np.array(point, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        try:
            flat[i] = orig + step
            fp = fn(Tensor(x)).item()
            flat[i] = orig - step
            fm = fn(Tensor(x)).item()
        except (ValueError, ArithmeticError) as exc:
            raise NumericalError(f"grad_check: evaluation failed at coordinate {i}: {exc}",
                                 index=i) from exc
        finally:
            flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalError(f"grad_check: non-finite value at coordinate {i}", index=i)
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def grad_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max over coordinates of |autodiff - central difference| / max(1, |central difference|)."""
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = fn(x)
    if not math.isfinite(out.item()):
        raise NumericalError("grad_check: non-finite value at the base point")
    if out.requires_grad:
        analytic = backward(out).get(x, np.zeros_like(x.data))
    else:
        analytic = np.zeros_like(x.data)
    bad = np.flatnonzero(~np.isfinite(analytic))
    if bad.size:
        raise NumericalError(f"grad_check: non-finite gradient at coordinate {bad[0]}", index=int(bad[0]))
    numeric = numeric_grad(fn, x.data, step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
